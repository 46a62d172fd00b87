"""Command-line entry point: train, evaluate, serve, report."""

from __future__ import annotations

import argparse
import errno
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import weights as wfmt
from .cluster import ConfigError
from .config import GlobalConfig, load_config, to_dict

log = logging.getLogger("agmarl")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PORT_BUSY, EXIT_USAGE = 0, 2, 3, 4, 64


def _config(path) -> GlobalConfig:
    return load_config(path) if path else GlobalConfig()


def seed_streams(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent (model init, training) streams derived from one seed."""
    init, train = np.random.SeedSequence(seed).spawn(2)
    return init, train


def train_model(cfg: GlobalConfig, seed: int, progress=None):
    from .networks import MarlModel
    from .training import train
    from .workloads import episode_factory

    cluster = cfg.training_cluster()
    init_ss, train_ss = seed_streams(seed)
    model = MarlModel.init(cluster.max_nodes, np.random.default_rng(init_ss))
    factory = episode_factory(cluster, cfg.training.workload, cfg.env_config())
    return train(factory, model, cfg.hyperparams, cfg.selection.build(), train_ss,
                 cfg.cost_table_enum(), progress=progress)


def cmd_train(config_path, seed: int, out) -> int:
    from .training import TrainingDiverged
    try:
        cfg = _config(config_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = train_model(cfg, seed, progress=lambda r: log.info(
            "episode %d reward %.4f mse %.4f", r.episode, r.mean_reward, r.mse_term))
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    wfmt.save(out, result.model.arrays())
    result.write_csv(out.with_name(out.name + ".log.csv"))
    return EXIT_OK


def _load_model(path):
    from .networks import MarlModel
    return MarlModel.from_arrays(wfmt.load(path))


def evaluate_one(cfg: GlobalConfig, model, scenario: int, seed: int, outdir: Path, charts=True) -> dict:
    from .analysis import analyze, json_safe, write_bundle
    from .scenarios import SCENARIOS, run_ab, save_frame

    script = SCENARIOS[scenario]()
    frames = run_ab(script, model, seed, cfg.selection.build(), cfg.admission, cfg.cluster, cfg.env_config())
    summary = {}
    for f in frames:
        save_frame(f, outdir)
        b = analyze(f)
        write_bundle(b, outdir, charts=charts)
        summary[f.policy] = b.scalars
    summary = json_safe(summary)
    (outdir / f"{script.name}_{seed}_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def cmd_evaluate(scenario: int, weights_path, seed: int, outdir, config_path=None, seeds: int = 1,
                 charts: bool = True) -> int:
    if scenario not in (1, 2):
        print("scenario must be 1 or 2", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config(config_path)
        model = _load_model(weights_path)
    except (ConfigError, OSError, KeyError, ValueError) as e:
        print(f"cannot load inputs: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if model.n_agents < cfg.cluster.max_nodes:
        print(f"weights hold {model.n_agents} agents, cluster needs {cfg.cluster.max_nodes}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for s in range(seed, seed + seeds):
        summary = evaluate_one(cfg, model, scenario, s, outdir, charts)
        log.info("seed %d: %s", s, summary)
    return EXIT_OK


def cmd_serve(weights_path, port: int, config_path=None, state_path=None, host="127.0.0.1") -> int:
    from .extender import LiveStateSource, ModelSlot, StaticStateSource, make_server
    try:
        cfg = _config(config_path)
        model = _load_model(weights_path)
        source = StaticStateSource(load_registry(state_path)) if state_path else LiveStateSource()
    except (ConfigError, OSError, KeyError, ValueError) as e:
        print(f"cannot load inputs: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        server = make_server(ModelSlot(model, str(weights_path)), source, host, port,
                             selection=cfg.selection.build(), ft_floor=cfg.ft_floor)
    except OSError as e:
        if e.errno in (errno.EADDRINUSE, errno.EACCES):
            print(f"port {port} unavailable: {e}", file=sys.stderr)
            return EXIT_PORT_BUSY
        raise
    log.info("serving on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def load_registry(path):
    """Node registry from a JSON object {name: NodeState fields}."""
    from .cluster import CostClass, NodeState
    from .extender import NodeRegistry
    data = json.loads(Path(path).read_text())
    nodes = {}
    for name, d in data.items():
        d = dict(d)
        d["taints"] = tuple(d.get("taints", ()))
        d["pod_ids"] = tuple(d.get("pod_ids", ()))
        if "cost_class" in d:
            d["cost_class"] = CostClass(d["cost_class"])
        nodes[name] = NodeState(**d)
    return NodeRegistry(nodes)


def cmd_report(metrics_dir, outdir=None) -> int:
    from .analysis import aggregate, analyze, json_safe, write_bundle
    from .scenarios import load_frame
    metrics_dir = Path(metrics_dir)
    metas = sorted(metrics_dir.glob("*_frame.json")) if metrics_dir.is_dir() else []
    if not metas:
        print(f"no metrics frames in {metrics_dir}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(outdir) if outdir else metrics_dir
    outdir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[dict]] = {}
    for m in metas:
        frame = load_frame(m)
        b = analyze(frame)
        write_bundle(b, outdir, charts=False)
        groups.setdefault(f"{frame.scenario}/{frame.policy}", []).append(b.scalars)
    report = {k: aggregate(v) for k, v in sorted(groups.items())}
    (outdir / "report.json").write_text(json.dumps(json_safe(report), indent=1, sort_keys=True) + "\n")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agmarl", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    t = sub.add_parser("train", help="train weights")
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    e = sub.add_parser("evaluate", help="A/B a scenario against the baseline")
    e.add_argument("--scenario", type=int, required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--seeds", type=int, default=1)
    e.add_argument("--outdir", required=True)
    e.add_argument("--config")
    e.add_argument("--time-scale", type=float, default=1.0,
                   help="wall-clock compression; the simulator never waits, so this only validates")
    e.add_argument("--no-charts", action="store_true")
    s = sub.add_parser("serve", help="run the extender service")
    s.add_argument("--weights", required=True)
    s.add_argument("--port", type=int, default=8888)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--config")
    s.add_argument("--state", help="JSON node registry (static state source)")
    r = sub.add_parser("report", help="aggregate stored metrics frames")
    r.add_argument("--outdir", required=True, help="directory holding *_frame.json files")
    r.add_argument("--out", help="where to write the report (defaults to --outdir)")
    c = sub.add_parser("config", help="print the default configuration")
    c.add_argument("--config")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AGMARL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.cmd == "train":
        return cmd_train(args.config, args.seed, args.out)
    if args.cmd == "evaluate":
        if args.time_scale <= 0 or args.seeds < 1:
            print("--time-scale must be positive and --seeds at least 1", file=sys.stderr)
            return EXIT_USAGE
        return cmd_evaluate(args.scenario, args.weights, args.seed, args.outdir, args.config,
                            args.seeds, charts=not args.no_charts)
    if args.cmd == "serve":
        return cmd_serve(args.weights, args.port, args.config, args.state, args.host)
    if args.cmd == "report":
        return cmd_report(args.outdir, args.out)
    if args.cmd == "config":
        try:
            cfg = _config(args.config)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(to_dict(cfg), indent=1))
        return EXIT_OK
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
