"""Cluster domain types, per-node objective metrics and the global stress level."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

RAW_FEATURE_DIM = 10
RESTART_WINDOW_S = 3600.0
RESTART_LOG_CAP = 100
TAINT_NORM = 5


class ConfigError(ValueError):
    """Invalid configuration value (bad capacity, missing cost class, ...)."""


class CostClass(str, enum.Enum):
    STANDARD = "Standard"
    HIGHMEM = "HighMem"
    SPOT = "Spot"


DEFAULT_COST_TABLE: dict[CostClass, float] = {
    CostClass.STANDARD: 1.0,
    CostClass.HIGHMEM: 1.35,
    CostClass.SPOT: 0.35,
}


@dataclass(frozen=True)
class StressWeights:
    util: float = 0.5
    pressure: float = 0.3
    restarts: float = 0.2
    restarts_per_node_cap: float = 10.0


@dataclass(frozen=True)
class NodeState:
    node_id: int
    cpu_capacity: float
    mem_capacity: float
    cpu_allocated: float = 0.0
    mem_allocated: float = 0.0
    memory_pressure: bool = False
    disk_pressure: bool = False
    ready: bool = True
    taints: tuple[str, ...] = ()
    restarts_window: int = 0
    cost_class: CostClass = CostClass.STANDARD
    pod_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.cpu_allocated <= self.cpu_capacity + 1e-9):
            raise ValueError(f"node {self.node_id}: cpu_allocated out of range")
        if not (0.0 <= self.mem_allocated <= self.mem_capacity + 1e-9):
            raise ValueError(f"node {self.node_id}: mem_allocated out of range")
        if self.restarts_window < 0:
            raise ValueError("restarts_window must be non-negative")

    @property
    def taint_count(self) -> int:
        return len(self.taints)

    @property
    def cpu_free(self) -> float:
        return self.cpu_capacity - self.cpu_allocated

    @property
    def mem_free(self) -> float:
        return self.mem_capacity - self.mem_allocated


@dataclass(frozen=True)
class ClusterGraph:
    """Global state: every node plus a fully connected, loop-free edge set."""

    nodes: tuple[NodeState, ...]
    sim_time: float = 0.0
    stress: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.stress <= 1.0:
            raise ValueError(f"stress {self.stress} outside [0, 1]")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")

    @property
    def node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes]

    def node(self, node_id: int) -> NodeState:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(f"unknown node {node_id}")

    def neighbours(self, node_id: int) -> list[int]:
        self.node(node_id)
        return [n.node_id for n in self.nodes if n.node_id != node_id]

    def edges(self) -> list[tuple[int, int]]:
        ids = self.node_ids
        return [(a, b) for a in ids for b in ids if a != b]

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """Raw features of every node, rows in ``nodes`` order."""
        if not self.nodes:
            return np.zeros((0, RAW_FEATURE_DIM))
        return np.stack([raw_features(n, self) for n in self.nodes])


def metric_ft(node: NodeState) -> float:
    h = 1.0 if node.memory_pressure else 0.0
    return (1.0 - h) / (1.0 + math.log1p(node.restarts_window))


def metric_util(node: NodeState) -> float:
    if node.cpu_capacity <= 0 or node.mem_capacity <= 0:
        raise ConfigError(f"node {node.node_id} has zero capacity")
    return 0.5 * (node.cpu_allocated / node.cpu_capacity + node.mem_allocated / node.mem_capacity)


def metric_cost(node: NodeState, cost_table: Mapping[CostClass, float] = DEFAULT_COST_TABLE) -> float:
    try:
        cost = cost_table[CostClass(node.cost_class)]
    except KeyError:
        raise ConfigError(f"no cost configured for {node.cost_class!r}") from None
    if cost <= 0:
        raise ConfigError(f"cost for {node.cost_class!r} must be positive")
    return 1.0 / cost


def compute_stress(g: ClusterGraph | Sequence[NodeState], weights: StressWeights = StressWeights()) -> float:
    nodes = g.nodes if isinstance(g, ClusterGraph) else tuple(g)
    if not nodes:
        raise ValueError("cannot compute stress of an empty cluster")
    n = len(nodes)
    mean_util = sum(metric_util(x) for x in nodes) / n
    pressured = sum(1 for x in nodes if x.memory_pressure or x.disk_pressure) / n
    restarts = sum(x.restarts_window for x in nodes)
    restart_term = min(1.0, restarts / (weights.restarts_per_node_cap * n))
    value = weights.util * mean_util + weights.pressure * pressured + weights.restarts * restart_term
    return min(1.0, max(0.0, value))


def raw_features(node: NodeState, g: ClusterGraph) -> np.ndarray:
    """The fixed 10-entry feature vector for one node, every entry in [0, 1]."""
    max_cpu = max(n.cpu_capacity for n in g.nodes)
    max_mem = max(n.mem_capacity for n in g.nodes)
    restarts = math.log1p(min(node.restarts_window, RESTART_LOG_CAP)) / math.log1p(RESTART_LOG_CAP)
    return np.array([
        node.cpu_allocated / node.cpu_capacity,
        node.mem_allocated / node.mem_capacity,
        node.cpu_capacity / max_cpu,
        node.mem_capacity / max_mem,
        float(node.memory_pressure),
        float(node.disk_pressure),
        float(node.ready),
        min(1.0, node.taint_count / TAINT_NORM),
        restarts,
        g.stress,
    ], dtype=np.float64)


def with_stress(nodes: Sequence[NodeState], sim_time: float = 0.0,
                weights: StressWeights = StressWeights()) -> ClusterGraph:
    """Build a graph whose stress field is computed from its own nodes."""
    nodes = tuple(nodes)
    return ClusterGraph(nodes=nodes, sim_time=sim_time, stress=compute_stress(nodes, weights))


@dataclass(frozen=True)
class FaultMode:
    """Injected failure behaviour of a pod; ``kind`` is None, LivenessFail or OomKill."""

    kind: str = "None"
    after: float = 0.0
    spike_to: float = 0.0
    limit: float | None = None

    def __post_init__(self):
        if self.kind not in ("None", "LivenessFail", "OomKill"):
            raise ValueError(f"unknown fault mode {self.kind!r}")


NO_FAULT = FaultMode()


def liveness_fail(after: float) -> FaultMode:
    return FaultMode("LivenessFail", after=after)


def oom_kill(spike_to: float, after: float, limit: float | None = None) -> FaultMode:
    return FaultMode("OomKill", after=after, spike_to=spike_to, limit=limit)


@dataclass(frozen=True)
class PodSpec:
    pod_id: str
    app_label: str
    cpu_request: float
    mem_request: float
    lifetime: float = math.inf
    fault_mode: FaultMode = NO_FAULT
    priority_class: str = "Normal"
    tolerations: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.cpu_request <= 0 or self.mem_request <= 0:
            raise ValueError(f"pod {self.pod_id}: requests must be positive")
        if self.priority_class not in ("Normal", "Batch", "Burst"):
            raise ValueError(f"unknown priority class {self.priority_class!r}")
