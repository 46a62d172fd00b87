"""Train the 3-node toy cluster and report the learning signal.

Writes the per-episode log as CSV next to the weights and prints the ratio of the
final-10 to first-10 episode MSE term together with the mean reward in both windows.

    python3 scripts/train_toy.py --episodes 200 --seed 0 --out runs/toy
"""

import argparse
import dataclasses
import time
from pathlib import Path

import numpy as np

from agmarl import weights
from agmarl.cli import train_model
from agmarl.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "toy.json"))
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/toy")
    args = p.parse_args()

    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, hyperparams=dataclasses.replace(cfg.hyperparams, episodes=args.episodes))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    result = train_model(cfg, args.seed, progress=lambda r: r.episode % 20 == 19 and print(
        f"episode {r.episode + 1:4d}  reward {r.mean_reward:+.4f}  mse {r.mse_term:.4f}  lr {r.lr:.2e}",
        flush=True))
    weights.save(out / "toy.agmw", result.model.arrays())
    result.write_csv(out / "toy_log.csv")

    log = result.log
    k = min(10, len(log))
    first, last = np.mean([e.mse_term for e in log[:k]]), np.mean([e.mse_term for e in log[-k:]])
    r0, r1 = np.mean([e.mean_reward for e in log[:k]]), np.mean([e.mean_reward for e in log[-k:]])
    print(f"mse ratio (last {k} / first {k}): {last / first:.3f}")
    print(f"mean reward: {r0:+.4f} -> {r1:+.4f}")
    print(f"elapsed {time.time() - t0:.0f} s; artefacts in {out}")


if __name__ == "__main__":
    main()
