"""Train (or load) scenario weights and A/B both scenarios against the baseline scheduler.

Prints the quantities behind the qualitative trend checks for each seed, with and
without the admission cap, and writes every metrics frame and analysis bundle to --out.

    python3 scripts/run_scenarios.py --train-seeds 0 1 --eval-seeds 0 1 2 --out runs/scenarios
    python3 scripts/run_scenarios.py --weights runs/w.agmw --out runs/scenarios
"""

import argparse
import json
import time
from pathlib import Path

from agmarl import weights
from agmarl.analysis import analyze, json_safe, summary_scalars, write_bundle
from agmarl.cli import train_model
from agmarl.config import load_config
from agmarl.networks import MarlModel
from agmarl.scenarios import AdmissionCap, run_ab, save_frame, scenario_one, scenario_two

ROOT = Path(__file__).resolve().parents[1]
LIVENESS_APP = "busybox-liveness"


def evaluate(model, cfg, seed, outdir, charts):
    rows = {}
    for name, script in (("scenario1", scenario_one), ("scenario2", scenario_two)):
        frames = run_ab(script(), model, seed, cfg.selection.build(), cfg.admission, cfg.cluster, cfg.env_config())
        for f in frames:
            save_frame(f, outdir)
            write_bundle(analyze(f), outdir, charts=charts)
        rows[name] = [summary_scalars(f) for f in frames]
    nocap = run_ab(scenario_two(), model, seed, cfg.selection.build(), AdmissionCap(enabled=False), cfg.cluster,
                   cfg.env_config())[0]
    rows["scenario2_nocap"] = [summary_scalars(nocap)]
    return rows


def describe(rows):
    (a1, b1), (a2, b2), (n2,) = rows["scenario1"], rows["scenario2"], rows["scenario2_nocap"]
    ra, rb = (s["max_restarts_per_node_by_app"].get(LIVENESS_APP, 0) for s in (a2, b2))
    return (f"  s1 packing {a1['packing_index']:.4f}/{b1['packing_index']:.4f} "
            f"= {a1['packing_index'] / b1['packing_index']:.3f}, baseline phase-I spread "
            f"{b1['first_phase_pod_spread']}\n"
            f"  s2 liveness restarts {ra}/{rb} = {ra / max(rb, 1):.3f}, burst clearance "
            f"{a2['burst_clearance_s']:.1f}/{b2['burst_clearance_s']:.1f} s\n"
            f"  s2 without cap: restarts {n2['max_restarts_per_node_by_app'].get(LIVENESS_APP, 0)}, "
            f"burst clearance {n2['burst_clearance_s']:.1f} s")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "scenario.json"))
    p.add_argument("--weights", help="evaluate these weights instead of training")
    p.add_argument("--train-seeds", type=int, nargs="+", default=[0])
    p.add_argument("--eval-seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", default="runs/scenarios")
    p.add_argument("--charts", action="store_true")
    args = p.parse_args()

    cfg = load_config(args.config)
    out = Path(args.out)
    models = {}
    if args.weights:
        models["given"] = MarlModel.from_arrays(weights.load(args.weights))
    else:
        for s in args.train_seeds:
            t0 = time.time()
            models[f"train{s}"] = train_model(cfg, s).model
            (out / f"train{s}").mkdir(parents=True, exist_ok=True)
            weights.save(out / f"train{s}" / "w.agmw", models[f"train{s}"].arrays())
            print(f"trained seed {s} in {time.time() - t0:.0f} s", flush=True)

    summary = {}
    for tag, model in models.items():
        for seed in args.eval_seeds:
            d = out / tag / f"eval{seed}"
            rows = evaluate(model, cfg, seed, d, args.charts)
            summary[f"{tag}/eval{seed}"] = rows
            print(f"{tag} eval seed {seed}:\n{describe(rows)}", flush=True)
    (out / "summary.json").write_text(json.dumps(json_safe(summary), indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
