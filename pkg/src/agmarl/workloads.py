"""Randomised training episodes on the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import FaultMode, PodSpec, liveness_fail, oom_kill
from .sim import AutoscaleConfig, ClusterConfig, ClusterEnv, EnvConfig, PoolConfig, StressPoolConfig

# (app, cpu m, mem Mi, mean lifetime s, fault)
TEMPLATES = (
    ("web", 100.0, 128.0, 900.0, None),
    ("api", 250.0, 512.0, 600.0, None),
    ("spiky", 250.0, 512.0, 600.0, ("oom", 1024.0, 300.0, None)),
    ("peak", 500.0, 800.0, 400.0, None),
    ("batch", 1500.0, 2048.0, 300.0, None),
    ("busybox", 50.0, 64.0, 900.0, ("live", 60.0)),
    ("stress-ng", 100.0, 256.0, 900.0, ("oom", 512.0, 90.0, 384.0)),
    ("burst", 1000.0, 1024.0, 90.0, None),
)


@dataclass(frozen=True)
class WorkloadConfig:
    horizon_s: float = 3600.0
    mean_gap_s: tuple[float, float] = (4.0, 30.0)
    jitter: float = 0.5
    randomize_initial: bool = True
    max_background: float = 0.7
    max_past_restarts: int = 60
    pressure_prob: float = 0.15
    random_pool_size: bool = True
    template_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        lo, hi = self.mean_gap_s
        if not 0 < lo <= hi:
            raise ValueError("mean_gap_s must be an increasing positive pair")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.template_weights is not None and len(self.template_weights) != len(TEMPLATES):
            raise ValueError("one weight per template")


def toy_cluster(n_nodes: int = 3) -> ClusterConfig:
    """A fixed-size Standard pool with no autoscaling."""
    return ClusterConfig(baseline_pool=PoolConfig(count=n_nodes),
                         stress_pool=StressPoolConfig(min=0, max=0),
                         autoscale=AutoscaleConfig(enabled=False))


def _fault(spec) -> FaultMode:
    if spec is None:
        return FaultMode()
    if spec[0] == "live":
        return liveness_fail(spec[1])
    return oom_kill(spec[1], after=spec[2], limit=spec[3])


def sample_pod(k: int, rng: np.random.Generator, cfg: WorkloadConfig) -> PodSpec:
    w = np.asarray(cfg.template_weights or [1.0] * len(TEMPLATES), dtype=float)
    app, cpu, mem, life, fault = TEMPLATES[rng.choice(len(TEMPLATES), p=w / w.sum())]
    scale = 1.0 + rng.uniform(-cfg.jitter, cfg.jitter)
    return PodSpec(pod_id=f"train-{k}", app_label=app, cpu_request=round(cpu * scale, 3),
                   mem_request=round(mem * scale, 3), lifetime=float(rng.exponential(life)) + 1.0,
                   fault_mode=_fault(fault),
                   priority_class="Burst" if app == "burst" else "Batch" if app == "batch" else "Normal")


def randomize_initial(env: ClusterEnv, rng: np.random.Generator, cfg: WorkloadConfig):
    """Background load, past restarts and recent OOM pressure on each node."""
    window = env.cfg.restart_window_s
    for nid in sorted(env.nodes):
        node = env.nodes[nid]
        f_cpu, f_mem = rng.uniform(0, cfg.max_background, 2)
        if f_cpu * node.cpu_capacity >= 1.0:
            env.preload(PodSpec(pod_id=f"bg-{nid}", app_label="background",
                                cpu_request=round(f_cpu * node.cpu_capacity, 3),
                                mem_request=round(f_mem * node.mem_capacity, 3)), nid)
        n_restarts = int(rng.integers(0, cfg.max_past_restarts + 1)) if rng.random() < 0.5 else 0
        for t in np.sort(rng.uniform(-window, 0, n_restarts)):
            node.restart_times.append(float(t))
        if rng.random() < cfg.pressure_prob:
            node.last_oom = -float(rng.uniform(0, env.cfg.oom_pressure_s))


class TrainingEpisode:
    """A fresh cluster with a Poisson stream of template pods."""

    def __init__(self, cluster: ClusterConfig, wl: WorkloadConfig, rng: np.random.Generator,
                 env_cfg: EnvConfig = EnvConfig()):
        self.env = ClusterEnv(cluster, env_cfg)
        self.horizon = wl.horizon_s
        sp = cluster.stress_pool
        if wl.random_pool_size and sp.max > sp.min:
            for _ in range(int(rng.integers(0, sp.max - sp.min + 1))):
                self.env._add_node(sp.cpu, sp.mem, sp.cost_class, "stress")
        if wl.randomize_initial:
            randomize_initial(self.env, rng, wl)
        gap = rng.uniform(*wl.mean_gap_s)
        t, k = 0.0, 0
        while True:
            t += rng.exponential(gap)
            if t >= self.horizon:
                break
            self.env.submit(sample_pod(k, rng, wl), at=t)
            k += 1

    def next_decision(self):
        return self.env.next_decision(until=self.horizon)

    def step(self, action):
        return self.env.step(action)


def episode_factory(cluster: ClusterConfig, wl: WorkloadConfig = WorkloadConfig(),
                    env_cfg: EnvConfig = EnvConfig()):
    def make(_episode: int, rng: np.random.Generator) -> TrainingEpisode:
        return TrainingEpisode(cluster, wl, rng, env_cfg)
    return make
