"""Discrete-event cluster simulator and the spreading baseline scheduler.

The simulator follows the scheduler's request-based view of resources: a bound
pod reserves its requests until it exits or is deleted. The one exception is
memory spikes of ``OomKill`` pods, which consume real memory above the request
and can kill the pod (and pressure the node) when the node runs out.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .cluster import (CostClass, DEFAULT_COST_TABLE, RESTART_WINDOW_S, ClusterGraph, NodeState,
                      PodSpec, StressWeights, compute_stress, metric_util)
from .lexico import NoFeasibleNode

EVENT_KINDS = ("PodArrival", "PodExit", "LivenessRestart", "OomSpike", "TaintNode", "UntaintNode",
               "AutoscaleCheck", "PodDelete", "Retry")


class InfeasibleBind(RuntimeError):
    pass


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: str
    pod: PodSpec | None = None
    pod_id: str | None = None
    node_id: int | None = None
    key: str | None = None
    incarnation: int = 0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class PoolConfig:
    count: int = 3
    cpu: float = 4000.0
    mem: float = 16384.0
    cost_class: CostClass = CostClass.STANDARD


@dataclass(frozen=True)
class StressPoolConfig:
    min: int = 1
    max: int = 5
    cpu: float = 4000.0
    mem: float = 32768.0
    cost_class: CostClass = CostClass.HIGHMEM


@dataclass(frozen=True)
class AutoscaleConfig:
    enabled: bool = True
    up_util: float = 0.8
    up_sustain_s: float = 60.0
    down_util: float = 0.3
    down_sustain_s: float = 300.0
    check_interval_s: float = 10.0


@dataclass(frozen=True)
class ClusterConfig:
    baseline_pool: PoolConfig = PoolConfig()
    stress_pool: StressPoolConfig = StressPoolConfig()
    autoscale: AutoscaleConfig = AutoscaleConfig()

    def __post_init__(self):
        sp = self.stress_pool
        if not 0 <= sp.min <= sp.max:
            raise ValueError("stress pool needs 0 <= min <= max")
        if min(self.baseline_pool.cpu, self.baseline_pool.mem, sp.cpu, sp.mem) <= 0:
            raise ValueError("node capacities must be positive")
        if self.baseline_pool.count + sp.min < 1:
            raise ValueError("cluster needs at least one node")

    @property
    def max_nodes(self) -> int:
        return self.baseline_pool.count + self.stress_pool.max


@dataclass(frozen=True)
class EnvConfig:
    retry_interval_s: float = 10.0
    pressure_free_frac: float = 0.10
    oom_pressure_s: float = 120.0
    restart_window_s: float = RESTART_WINDOW_S
    stress_weights: StressWeights = StressWeights()
    cost_table: Mapping = field(default_factory=lambda: dict(DEFAULT_COST_TABLE))


# pure graph helpers ----------------------------------------------------------

def tolerates(pod: PodSpec, node: NodeState) -> bool:
    return all(t in pod.tolerations for t in node.taints)


def feasible_candidates(g: ClusterGraph, pod: PodSpec) -> list[int]:
    return [n.node_id for n in g.nodes
            if n.ready and n.cpu_free >= pod.cpu_request and n.mem_free >= pod.mem_request
            and tolerates(pod, n)]


def bind(g: ClusterGraph, pod: PodSpec, node_id: int) -> ClusterGraph:
    if node_id not in feasible_candidates(g, pod):
        raise InfeasibleBind(f"pod {pod.pod_id} does not fit node {node_id}")
    nodes = tuple(
        dataclasses.replace(n, cpu_allocated=n.cpu_allocated + pod.cpu_request,
                            mem_allocated=n.mem_allocated + pod.mem_request,
                            pod_ids=n.pod_ids + (pod.pod_id,))
        if n.node_id == node_id else n for n in g.nodes)
    return dataclasses.replace(g, nodes=nodes)


def unbind(g: ClusterGraph, pod: PodSpec, node_id: int) -> ClusterGraph:
    nodes = []
    for n in g.nodes:
        if n.node_id == node_id:
            if pod.pod_id not in n.pod_ids:
                raise KeyError(f"pod {pod.pod_id} not on node {node_id}")
            ids = list(n.pod_ids)
            ids.remove(pod.pod_id)
            n = dataclasses.replace(n, cpu_allocated=max(0.0, n.cpu_allocated - pod.cpu_request),
                                    mem_allocated=max(0.0, n.mem_allocated - pod.mem_request),
                                    pod_ids=tuple(ids))
        nodes.append(n)
    return dataclasses.replace(g, nodes=tuple(nodes))


def free_fraction(n: NodeState) -> float:
    return 0.5 * (n.cpu_free / n.cpu_capacity + n.mem_free / n.mem_capacity)


def baseline_policy(g: ClusterGraph, pod: PodSpec) -> int:
    """Least-requested spreading: most free node, lowest id on ties."""
    feasible = set(feasible_candidates(g, pod))
    if not feasible:
        raise NoFeasibleNode(f"no node fits pod {pod.pod_id}")
    best = None
    for n in g.nodes:
        if n.node_id in feasible:
            key = (-free_fraction(n), n.node_id)
            if best is None or key < best[0]:
                best = (key, n.node_id)
    return best[1]


# simulator -----------------------------------------------------------------

@dataclass
class _Node:
    node_id: int
    cpu_capacity: float
    mem_capacity: float
    cost_class: CostClass
    pool: str
    created_at: float = 0.0
    cpu_alloc: float = 0.0
    mem_alloc: float = 0.0
    extra_mem: float = 0.0
    taints: list = field(default_factory=list)
    restart_times: deque = field(default_factory=deque)
    last_oom: float = -math.inf
    ready: bool = True
    pods: list = field(default_factory=list)


@dataclass
class PodRecord:
    spec: PodSpec
    arrival: float
    deadline: float | None = None
    node: int | None = None
    first_bind: float | None = None
    incarnation: int = 0
    extra_mem: float = 0.0
    restarts: int = 0
    done: bool = False


@dataclass(frozen=True)
class Decision:
    time: float
    pod: PodSpec
    graph: ClusterGraph
    candidates: tuple[int, ...]


class ClusterEnv:
    def __init__(self, cluster: ClusterConfig = ClusterConfig(), cfg: EnvConfig = EnvConfig()):
        self.cluster = cluster
        self.cfg = cfg
        self.reset()

    # lifecycle ------------------------------------------------------------
    def reset(self):
        self.time = 0.0
        self._seq = itertools.count()
        self._queue: list = []
        self.nodes: dict[int, _Node] = {}
        self.pods: dict[str, PodRecord] = {}
        self.pending: list[str] = []
        self._cycle: deque[str] = deque()
        self._cycle_requested = False
        self._retry_at: float | None = None
        self._current: PodRecord | None = None
        self._above_since: float | None = None
        self._below_since: float | None = None
        self.restarts_by: Counter = Counter()
        self.failures_by: Counter = Counter()
        self.restart_log: list[tuple[float, str, int]] = []
        self.deferrals = 0
        self.submitted_by: Counter = Counter()
        self.admitted_by: Counter = Counter()
        self.autoscale_log: list[tuple[float, str, int]] = []
        bp, sp = self.cluster.baseline_pool, self.cluster.stress_pool
        for _ in range(bp.count):
            self._add_node(bp.cpu, bp.mem, bp.cost_class, "baseline")
        for _ in range(sp.min):
            self._add_node(sp.cpu, sp.mem, sp.cost_class, "stress")
        if self.cluster.autoscale.enabled and sp.max > sp.min:
            self.push(SimEvent(0.0, "AutoscaleCheck"))

    def _add_node(self, cpu, mem, cost_class, pool) -> int:
        nid = 0
        while nid in self.nodes:
            nid += 1
        self.nodes[nid] = _Node(nid, cpu, mem, CostClass(cost_class), pool, created_at=self.time)
        return nid

    def push(self, ev: SimEvent):
        if ev.time < self.time - 1e-9:
            raise ValueError(f"event at {ev.time} is before current time {self.time}")
        heapq.heappush(self._queue, (ev.time, next(self._seq), ev))

    def submit(self, pod: PodSpec, at: float, deadline: float | None = None):
        if pod.pod_id in self.pods:
            raise KeyError(f"duplicate pod id {pod.pod_id}")
        self.pods[pod.pod_id] = PodRecord(pod, arrival=at, deadline=deadline)
        self.push(SimEvent(at, "PodArrival", pod=pod))
        if deadline is not None:
            self.push(SimEvent(deadline, "PodDelete", pod_id=pod.pod_id))

    def preload(self, pod: PodSpec, node_id: int):
        """Register ``pod`` and bind it to ``node_id`` immediately (initial cluster state)."""
        if pod.pod_id in self.pods:
            raise KeyError(f"duplicate pod id {pod.pod_id}")
        self.pods[pod.pod_id] = PodRecord(pod, arrival=self.time)
        try:
            self.bind(pod.pod_id, node_id)
        except InfeasibleBind:
            del self.pods[pod.pod_id]
            raise

    @property
    def next_event_time(self) -> float:
        return self._queue[0][0] if self._queue else math.inf

    # state views ----------------------------------------------------------
    def restarts_in_window(self, node: _Node) -> int:
        horizon = self.time - self.cfg.restart_window_s
        while node.restart_times and node.restart_times[0] <= horizon:
            node.restart_times.popleft()
        return len(node.restart_times)

    def memory_pressure(self, node: _Node) -> bool:
        used = node.mem_alloc + node.extra_mem
        return (node.mem_capacity - used < self.cfg.pressure_free_frac * node.mem_capacity
                or self.time - node.last_oom < self.cfg.oom_pressure_s)

    def node_state(self, node: _Node) -> NodeState:
        return NodeState(
            node_id=node.node_id, cpu_capacity=node.cpu_capacity, mem_capacity=node.mem_capacity,
            cpu_allocated=min(node.cpu_alloc, node.cpu_capacity),
            mem_allocated=min(node.mem_alloc, node.mem_capacity),
            memory_pressure=self.memory_pressure(node), ready=node.ready,
            taints=tuple(node.taints), restarts_window=self.restarts_in_window(node),
            cost_class=node.cost_class, pod_ids=tuple(node.pods))

    def snapshot(self) -> ClusterGraph:
        nodes = tuple(self.node_state(self.nodes[k]) for k in sorted(self.nodes))
        return ClusterGraph(nodes=nodes, sim_time=self.time,
                            stress=compute_stress(nodes, self.cfg.stress_weights))

    def dominant_util(self) -> float:
        nodes = list(self.nodes.values())
        cpu = sum(n.cpu_alloc for n in nodes) / sum(n.cpu_capacity for n in nodes)
        mem = sum(n.mem_alloc for n in nodes) / sum(n.mem_capacity for n in nodes)
        return max(cpu, mem)

    def app_restart_rate(self, app: str, window_s: float = 300.0) -> float:
        """Restarts per minute of one app family over a trailing window."""
        horizon = self.time - window_s
        n = 0
        for t, a, _ in reversed(self.restart_log):
            if t <= horizon:
                break
            if a == app:
                n += 1
        return n / (window_s / 60.0)

    def running_pods(self) -> list[PodRecord]:
        return [self.pods[p] for n in self.nodes.values() for p in n.pods]

    # event loop -----------------------------------------------------------
    def next_decision(self, until: float = math.inf) -> Decision | None:
        """Advance until a pending pod with feasible nodes awaits a decision.

        Returns None once no such decision exists at or before ``until``; the
        clock is then left at ``until`` (or at the last event if the queue ran dry).
        """
        if self._current is not None:
            raise RuntimeError("previous decision has not been resolved with step()")
        while True:
            while self._cycle:
                pid = self._cycle.popleft()
                rec = self.pods[pid]
                if rec.done or rec.node is not None:
                    continue
                graph = self.snapshot()
                cands = tuple(feasible_candidates(graph, rec.spec))
                if cands:
                    self._current = rec
                    return Decision(self.time, rec.spec, graph, cands)
            if self.pending and self._retry_at is None:
                self._retry_at = self.time + self.cfg.retry_interval_s
                self.push(SimEvent(self._retry_at, "Retry"))
            t_next = self.next_event_time
            if t_next > until:
                if until < math.inf:
                    self.time = max(self.time, until)
                return None
            if t_next == math.inf:
                return None
            self.time = t_next
            while self._queue and self._queue[0][0] <= self.time:
                _, _, ev = heapq.heappop(self._queue)
                self._handle(ev)
            if self._cycle_requested:
                self._cycle_requested = False
                self._cycle = deque(self.pending)

    def step(self, action: int | None) -> tuple[ClusterGraph, np.ndarray]:
        """Resolve the outstanding decision: bind to ``action`` or defer (None)."""
        rec = self._current
        if rec is None:
            raise RuntimeError("no outstanding decision")
        self._current = None
        if action is None:
            self.deferrals += 1
        else:
            self.bind(rec.spec.pod_id, action)
        g = self.snapshot()
        return g, g.feature_matrix

    def bind(self, pod_id: str, node_id: int):
        rec = self.pods[pod_id]
        node = self.nodes.get(node_id)
        spec = rec.spec
        if (node is None or rec.node is not None or not node.ready
                or node.cpu_capacity - node.cpu_alloc < spec.cpu_request - 1e-9
                or node.mem_capacity - node.mem_alloc < spec.mem_request - 1e-9
                or any(t not in spec.tolerations for t in node.taints)):
            raise InfeasibleBind(f"cannot bind {pod_id} to node {node_id}")
        node.cpu_alloc += spec.cpu_request
        node.mem_alloc += spec.mem_request
        node.pods.append(pod_id)
        rec.node = node_id
        rec.incarnation += 1
        if rec.first_bind is None:
            rec.first_bind = self.time
            self.admitted_by[spec.app_label] += 1
        if pod_id in self.pending:
            self.pending.remove(pod_id)
        inc = rec.incarnation
        if math.isfinite(spec.lifetime):
            self.push(SimEvent(self.time + spec.lifetime, "PodExit", pod_id=pod_id, incarnation=inc))
        fm = spec.fault_mode
        if fm.kind == "LivenessFail":
            self.push(SimEvent(self.time + fm.after, "LivenessRestart", pod_id=pod_id, incarnation=inc))
        elif fm.kind == "OomKill":
            self.push(SimEvent(self.time + fm.after, "OomSpike", pod_id=pod_id, incarnation=inc))

    def _release(self, rec: PodRecord):
        node = self.nodes[rec.node]
        node.cpu_alloc = max(0.0, node.cpu_alloc - rec.spec.cpu_request)
        node.mem_alloc = max(0.0, node.mem_alloc - rec.spec.mem_request)
        node.extra_mem = max(0.0, node.extra_mem - rec.extra_mem)
        node.pods.remove(rec.spec.pod_id)
        rec.extra_mem = 0.0
        rec.node = None
        rec.incarnation += 1

    def _record_restart(self, rec: PodRecord):
        node = self.nodes[rec.node]
        rec.restarts += 1
        node.restart_times.append(self.time)
        key = (rec.spec.app_label, rec.node)
        self.restarts_by[key] += 1
        self.failures_by[key] += 1
        self.restart_log.append((self.time, rec.spec.app_label, rec.node))

    def _live(self, ev: SimEvent) -> PodRecord | None:
        rec = self.pods.get(ev.pod_id)
        if rec is None or rec.done or rec.node is None or rec.incarnation != ev.incarnation:
            return None
        return rec

    def _handle(self, ev: SimEvent):
        kind = ev.kind
        if kind == "PodArrival":
            rec = self.pods[ev.pod.pod_id]
            if not rec.done:
                self.submitted_by[ev.pod.app_label] += 1
                self.pending.append(ev.pod.pod_id)
                self._cycle_requested = True
        elif kind == "Retry":
            self._retry_at = None
            if self.pending:
                self._cycle_requested = True
        elif kind == "PodExit":
            rec = self._live(ev)
            if rec is not None:
                self._release(rec)
                rec.done = True
        elif kind == "PodDelete":
            rec = self.pods.get(ev.pod_id)
            if rec is not None and not rec.done:
                if rec.node is not None:
                    self._release(rec)
                elif ev.pod_id in self.pending:
                    self.pending.remove(ev.pod_id)
                rec.done = True
        elif kind == "LivenessRestart":
            rec = self._live(ev)
            if rec is not None:
                self._record_restart(rec)
                self.push(SimEvent(self.time + rec.spec.fault_mode.after, "LivenessRestart",
                                   pod_id=ev.pod_id, incarnation=rec.incarnation))
        elif kind == "OomSpike":
            rec = self._live(ev)
            if rec is not None:
                self._oom_spike(rec)
        elif kind == "TaintNode":
            nid = ev.node_id if ev.node_id is not None else self.most_utilised_node()
            if nid in self.nodes and ev.key not in self.nodes[nid].taints:
                self.nodes[nid].taints.append(ev.key)
        elif kind == "UntaintNode":
            nid = ev.node_id
            if nid in self.nodes and ev.key in self.nodes[nid].taints:
                self.nodes[nid].taints.remove(ev.key)
        elif kind == "AutoscaleCheck":
            self._autoscale()
            self.push(SimEvent(self.time + self.cluster.autoscale.check_interval_s, "AutoscaleCheck"))

    def _oom_spike(self, rec: PodRecord):
        fm = rec.spec.fault_mode
        node = self.nodes[rec.node]
        extra = max(0.0, fm.spike_to - rec.spec.mem_request)
        node_free = node.mem_capacity - node.mem_alloc - node.extra_mem
        limit_kill = fm.limit is not None and fm.spike_to > fm.limit
        node_oom = extra > node_free
        if limit_kill or node_oom:
            if node_oom:
                node.last_oom = self.time
            self._record_restart(rec)
            self.push(SimEvent(self.time + fm.after, "OomSpike", pod_id=rec.spec.pod_id,
                               incarnation=rec.incarnation))
        else:
            rec.extra_mem = extra
            node.extra_mem += extra

    def most_utilised_node(self) -> int:
        return max(sorted(self.nodes), key=lambda k: metric_util(self.node_state(self.nodes[k])))

    def _autoscale(self):
        ac, sp = self.cluster.autoscale, self.cluster.stress_pool
        util = self.dominant_util()
        stress_nodes = sorted(k for k, n in self.nodes.items() if n.pool == "stress")
        if util > ac.up_util:
            self._below_since = None
            if self._above_since is None:
                self._above_since = self.time
            if self.time - self._above_since >= ac.up_sustain_s and len(stress_nodes) < sp.max:
                nid = self._add_node(sp.cpu, sp.mem, sp.cost_class, "stress")
                self.autoscale_log.append((self.time, "up", nid))
                self._above_since = self.time
                if self.pending:
                    self._cycle_requested = True
        elif util < ac.down_util:
            self._above_since = None
            if self._below_since is None:
                self._below_since = self.time
            if self.time - self._below_since >= ac.down_sustain_s and len(stress_nodes) > sp.min:
                empty = [k for k in stress_nodes if not self.nodes[k].pods]
                if empty:
                    del self.nodes[empty[-1]]
                    self.autoscale_log.append((self.time, "down", empty[-1]))
                    self._below_since = self.time
        else:
            self._above_since = None
            self._below_since = None

    # convenience ----------------------------------------------------------
    def run(self, policy: Callable[[Decision, "ClusterEnv"], int | None], until: float,
            on_sample: Callable[["ClusterEnv"], None] | None = None, sample_every: float = 10.0):
        """Drive the simulation to ``until`` with ``policy`` choosing nodes (None defers)."""
        t_sample = self.time if on_sample else math.inf
        while True:
            horizon = min(until, t_sample)
            d = self.next_decision(until=horizon)
            if d is not None:
                self.step(policy(d, self))
                continue
            if on_sample and t_sample <= until:
                self.time = max(self.time, t_sample)
                on_sample(self)
                t_sample += sample_every
                continue
            self.time = max(self.time, until)
            return


def baseline_scheduler(decision: Decision, env: ClusterEnv | None = None) -> int:
    return baseline_policy(decision.graph, decision.pod)


def check_conservation(env: ClusterEnv) -> None:
    """Raise if any node's allocations differ from the sum of its pods' requests."""
    for node in env.nodes.values():
        cpu = sum(env.pods[p].spec.cpu_request for p in node.pods)
        mem = sum(env.pods[p].spec.mem_request for p in node.pods)
        if abs(cpu - node.cpu_alloc) > 1e-6 or abs(mem - node.mem_alloc) > 1e-6:
            raise AssertionError(f"node {node.node_id}: allocation drift")
        if node.cpu_alloc > node.cpu_capacity + 1e-6 or node.mem_alloc > node.mem_capacity + 1e-6:
            raise AssertionError(f"node {node.node_id}: overcommitted")
