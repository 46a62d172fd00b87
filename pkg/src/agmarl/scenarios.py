"""The two evaluation scenarios, the AGMARL scheduler wrapper and A/B runs."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster import DEFAULT_COST_TABLE, PodSpec, liveness_fail, metric_util, oom_kill
from .lexico import SelectionConfig, StressRegime, lex_select, regime_of
from .networks import MarlModel
from .sim import ClusterConfig, ClusterEnv, Decision, EnvConfig, SimEvent, baseline_scheduler

SAMPLE_INTERVAL_S = 10.0


@dataclass(frozen=True)
class Workload:
    count: int
    template: PodSpec
    stress_label: str
    ramp_s: float = 0.0
    jitter: float = 0.0
    scoped: bool = False  # deleted at the end of its phase

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("workload count must be positive")
        if self.ramp_s < 0 or not 0 <= self.jitter < 1:
            raise ValueError("ramp must be non-negative and jitter in [0, 1)")


@dataclass(frozen=True)
class PhaseEvent:
    offset_s: float
    kind: str
    key: str | None = None
    node_id: int | None = None


@dataclass(frozen=True)
class Phase:
    name: str
    start: float  # minutes
    end: float
    workloads: tuple[Workload, ...] = ()
    events: tuple[PhaseEvent, ...] = ()

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"phase {self.name}: need 0 <= start < end")


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    phases: tuple[Phase, ...]

    def __post_init__(self):
        starts = [p.start for p in self.phases]
        if not self.phases or starts != sorted(starts):
            raise ValueError("phases must be non-empty and time-ordered")

    @property
    def duration_s(self) -> float:
        return 60.0 * max(p.end for p in self.phases)

    @property
    def total_pods(self) -> int:
        return sum(w.count for p in self.phases for w in p.workloads)

    def arrivals(self, seed: int) -> list[tuple[float, PodSpec, float | None]]:
        """(time, pod, deletion deadline) triples; the seed drives request jitter only."""
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        out = []
        for pi, phase in enumerate(self.phases):
            t0, t1 = 60.0 * phase.start, 60.0 * phase.end
            for wi, w in enumerate(phase.workloads):
                for k in range(w.count):
                    pod = w.template
                    if w.jitter:
                        f_cpu, f_mem = 1.0 + rng.uniform(-w.jitter, w.jitter, 2)
                        pod = dataclasses.replace(pod, cpu_request=round(pod.cpu_request * f_cpu, 3),
                                                  mem_request=round(pod.mem_request * f_mem, 3))
                    pod = dataclasses.replace(pod, pod_id=f"{w.template.app_label}-{pi}{wi}-{k:03d}")
                    t = t0 + w.ramp_s * k / w.count
                    out.append((t, pod, t1 if w.scoped else None))
        return out

    def load(self, env: ClusterEnv, seed: int):
        for t, pod, deadline in self.arrivals(seed):
            env.submit(pod, at=t, deadline=deadline)
        for phase in self.phases:
            for ev in phase.events:
                env.push(SimEvent(60.0 * phase.start + ev.offset_s, ev.kind, key=ev.key,
                                  node_id=ev.node_id))

    def phase_at(self, t: float) -> str | None:
        name = None
        for p in self.phases:
            if 60.0 * p.start <= t < 60.0 * p.end:
                name = p.name
        return name

    def to_json(self) -> str:
        return json.dumps(_jsonable(dataclasses.asdict(self)), sort_keys=True, indent=1)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, frozenset):
        return sorted(x)
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if hasattr(x, "value"):
        return x.value
    return x


BATCH_JOB_S = 300.0


def scenario_one() -> ScenarioScript:
    nginx = PodSpec("nginx-baseline", "nginx-baseline", 100.0, 128.0)
    growth = PodSpec("app-growth", "app-growth", 250.0, 512.0,
                     fault_mode=oom_kill(1024.0, after=300.0))
    peak = PodSpec("peak-demand", "peak-demand", 500.0, 800.0)
    batch = PodSpec("batch-job", "batch-job", 1500.0, 2048.0, lifetime=BATCH_JOB_S, priority_class="Batch")
    return ScenarioScript("scenario1", (
        Phase("I", 0, 10, (Workload(100, nginx, "Low", ramp_s=600.0),)),
        Phase("II", 10, 20, (Workload(75, growth, "Medium", ramp_s=300.0, scoped=True),)),
        Phase("III", 20, 30, (Workload(150, peak, "High", ramp_s=120.0, jitter=0.5, scoped=True),)),
        Phase("IV", 30, 40, (Workload(20, batch, "Extreme"),)),
    ))


TAINT_KEY = "failure-sim"


def scenario_two() -> ScenarioScript:
    busybox = PodSpec("busybox-liveness", "busybox-liveness", 50.0, 64.0,
                      fault_mode=liveness_fail(60.0))
    stress = PodSpec("stress-ng-oom", "stress-ng-oom", 100.0, 256.0,
                     fault_mode=oom_kill(2048.0, after=90.0))
    burst = PodSpec("burst-job", "burst-job", 1000.0, 1024.0, lifetime=90.0, priority_class="Burst")
    return ScenarioScript("scenario2", (
        Phase("I", 0, 30, (Workload(150, busybox, "High", ramp_s=600.0),
                           Workload(120, stress, "High", ramp_s=600.0))),
        Phase("II", 15, 30, (Workload(50, burst, "Extreme", ramp_s=60.0),)),
        Phase("III", 30, 45, events=(PhaseEvent(0.0, "TaintNode", key=TAINT_KEY),)),
    ))


SCENARIOS = {1: scenario_one, 2: scenario_two}


# schedulers -----------------------------------------------------------------

@dataclass(frozen=True)
class AdmissionCap:
    enabled: bool = True
    fraction: float = 0.7
    restart_rate_per_min: float = 1.0
    window_s: float = 300.0
    min_regime: StressRegime = StressRegime.HIGH

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError("admission fraction must lie in (0, 1]")


class AgmarlScheduler:
    """GNN + actor inference, lexicographic selection, optional admission cap."""

    def __init__(self, model: MarlModel, selection: SelectionConfig | None = None,
                 admission: AdmissionCap | None = AdmissionCap()):
        self.model = model
        self.selection = selection or SelectionConfig()
        self.admission = admission
        self.deferred = 0

    def capped(self, d: Decision, env: ClusterEnv) -> bool:
        cap = self.admission
        if cap is None or not cap.enabled:
            return False
        if regime_of(d.graph.stress, self.selection.thresholds) < cap.min_regime:
            return False
        app = d.pod.app_label
        if env.app_restart_rate(app, cap.window_s) <= cap.restart_rate_per_min:
            return False
        return env.admitted_by[app] >= math.ceil(cap.fraction * env.submitted_by[app])

    def scores(self, graph) -> dict[int, np.ndarray]:
        ids = graph.node_ids
        s = self.model.scores(graph.feature_matrix, ids)
        return {i: s[k] for k, i in enumerate(ids)}

    def __call__(self, d: Decision, env: ClusterEnv) -> int | None:
        if self.capped(d, env):
            self.deferred += 1
            return None
        scores = self.scores(d.graph)
        return lex_select({c: scores[c] for c in d.candidates}, d.graph.stress, self.selection)


# metrics -------------------------------------------------------------------

@dataclass
class MetricsFrame:
    scenario: str
    policy: str
    seed: int
    interval_s: float
    phases: list[dict]
    node_rows: list[dict] = field(default_factory=list)
    cluster_rows: list[dict] = field(default_factory=list)
    pod_rows: list[dict] = field(default_factory=list)
    restart_rows: list[dict] = field(default_factory=list)
    deferrals: int = 0

    @property
    def apps(self) -> list[str]:
        return sorted({r["app"] for r in self.pod_rows})

    def times(self) -> list[float]:
        return [r["time"] for r in self.cluster_rows]


class Recorder:
    def __init__(self, frame: MetricsFrame, cost_table: Mapping):
        self.frame = frame
        self.cost_table = cost_table
        self.cost = 0.0
        self.node_cost: dict[int, float] = {}

    def __call__(self, env: ClusterEnv):
        f = self.frame
        t = env.time
        dt_h = f.interval_s / 3600.0
        g = env.snapshot()
        per_app: dict[int, dict[str, int]] = {}
        for n in env.nodes.values():
            counts: dict[str, int] = {}
            for pid in n.pods:
                app = env.pods[pid].spec.app_label
                counts[app] = counts.get(app, 0) + 1
            per_app[n.node_id] = counts
        restarts: dict[int, int] = {}
        for (app, nid), c in env.restarts_by.items():
            restarts[nid] = restarts.get(nid, 0) + c
        failures: dict[int, int] = {}
        for (app, nid), c in env.failures_by.items():
            failures[nid] = failures.get(nid, 0) + c
        for state in g.nodes:
            nid = state.node_id
            rate = self.cost_table[state.cost_class]
            self.node_cost[nid] = self.node_cost.get(nid, 0.0) + rate * dt_h
            self.cost += rate * dt_h
            f.node_rows.append({
                "time": t, "node": nid, "pool": env.nodes[nid].pool,
                "cost_class": state.cost_class.value,
                "cpu_requested": state.cpu_allocated, "mem_requested": state.mem_allocated,
                "util": metric_util(state), "restarts": restarts.get(nid, 0),
                "failures": failures.get(nid, 0), "memory_pressure": int(state.memory_pressure),
                "cost": self.node_cost[nid], "pods": dict(sorted(per_app[nid].items())),
            })
        running = sum(len(n.pods) for n in env.nodes.values())
        f.cluster_rows.append({"time": t, "stress": float(g.stress), "pending": len(env.pending),
                               "running": running, "nodes": len(g.nodes), "cost": self.cost})


def _pod_rows(env: ClusterEnv) -> list[dict]:
    rows = []
    for pid in sorted(env.pods):
        r = env.pods[pid]
        rows.append({"pod": pid, "app": r.spec.app_label, "priority": r.spec.priority_class,
                     "cpu": r.spec.cpu_request, "mem": r.spec.mem_request, "arrival": r.arrival,
                     "first_bind": r.first_bind, "node": r.node, "restarts": r.restarts,
                     "done": int(r.done)})
    return rows


def run_scenario(script: ScenarioScript, policy, policy_name: str, seed: int,
                 cluster: ClusterConfig = ClusterConfig(), env_cfg: EnvConfig = EnvConfig()) -> MetricsFrame:
    env = ClusterEnv(cluster, env_cfg)
    script.load(env, seed)
    phases = [{"name": p.name, "start_s": 60.0 * p.start, "end_s": 60.0 * p.end,
               "apps": [w.template.app_label for w in p.workloads]} for p in script.phases]
    frame = MetricsFrame(script.name, policy_name, seed, SAMPLE_INTERVAL_S, phases)
    rec = Recorder(frame, env_cfg.cost_table)
    env.run(policy, until=script.duration_s, on_sample=rec, sample_every=SAMPLE_INTERVAL_S)
    frame.pod_rows = _pod_rows(env)
    frame.restart_rows = [{"app": a, "node": n, "restarts": c, "failures": env.failures_by[(a, n)]}
                          for (a, n), c in sorted(env.restarts_by.items())]
    frame.deferrals = env.deferrals
    return frame


def run_ab(script: ScenarioScript, model: MarlModel, seed: int,
           selection: SelectionConfig | None = None, admission: AdmissionCap | None = AdmissionCap(),
           cluster: ClusterConfig = ClusterConfig(),
           env_cfg: EnvConfig = EnvConfig()) -> tuple[MetricsFrame, MetricsFrame]:
    needed = cluster.max_nodes
    if model.n_agents < needed:
        raise ValueError(f"model has {model.n_agents} agents, cluster needs {needed}")
    agmarl = run_scenario(script, AgmarlScheduler(model, selection, admission), "agmarl", seed,
                          cluster, env_cfg)
    baseline = run_scenario(script, baseline_scheduler, "baseline", seed, cluster, env_cfg)
    return agmarl, baseline


# persistence -----------------------------------------------------------------

def frame_prefix(frame: MetricsFrame) -> str:
    return f"{frame.scenario}_{frame.policy}_{frame.seed}"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # plain repr; numpy scalars would print as np.float64(...)
    if isinstance(v, np.integer):
        return int(v)
    return v


def save_frame(frame: MetricsFrame, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pre = frame_prefix(frame)
    apps = frame.apps
    paths = []

    def write(name, header, rows):
        p = outdir / f"{pre}_{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        paths.append(p)

    node_cols = ["time", "node", "pool", "cost_class", "cpu_requested", "mem_requested", "util",
                 "restarts", "failures", "memory_pressure", "cost"]
    write("nodes", node_cols + [f"pods:{a}" for a in apps],
          ([r[c] for c in node_cols] + [r["pods"].get(a, 0) for a in apps] for r in frame.node_rows))
    cl_cols = ["time", "stress", "pending", "running", "nodes", "cost"]
    write("cluster", cl_cols, ([r[c] for c in cl_cols] for r in frame.cluster_rows))
    pod_cols = ["pod", "app", "priority", "cpu", "mem", "arrival", "first_bind", "node", "restarts", "done"]
    write("pods", pod_cols, ([r[c] for c in pod_cols] for r in frame.pod_rows))
    rs_cols = ["app", "node", "restarts", "failures"]
    write("restart_log", rs_cols, ([r[c] for c in rs_cols] for r in frame.restart_rows))
    meta = outdir / f"{pre}_frame.json"
    meta.write_text(json.dumps({"scenario": frame.scenario, "policy": frame.policy, "seed": frame.seed,
                                "interval_s": frame.interval_s, "phases": frame.phases,
                                "deferrals": frame.deferrals}, indent=1, sort_keys=True) + "\n")
    paths.append(meta)
    return paths


def _num(s: str):
    if s == "":
        return None
    try:
        v = int(s)
    except ValueError:
        try:
            v = float(s)
        except ValueError:
            return s
    return v


def load_frame(meta_path) -> MetricsFrame:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    pre = meta_path.name[: -len("_frame.json")]
    d = meta_path.parent
    frame = MetricsFrame(meta["scenario"], meta["policy"], meta["seed"], meta["interval_s"],
                         meta["phases"], deferrals=meta["deferrals"])

    def read(name):
        with open(d / f"{pre}_{name}.csv", newline="") as fh:
            return [{k: _num(v) for k, v in row.items()} for row in csv.DictReader(fh)]

    for r in read("nodes"):
        pods = {k[5:]: v for k, v in r.items() if k.startswith("pods:") and v}
        row = {k: v for k, v in r.items() if not k.startswith("pods:")}
        row["pods"] = pods
        for k in ("time", "cpu_requested", "mem_requested", "util", "cost"):
            row[k] = float(row[k])
        frame.node_rows.append(row)
    for r in read("cluster"):
        for k in ("time", "stress", "cost"):
            r[k] = float(r[k])
        frame.cluster_rows.append(r)
    for r in read("pods"):
        for k in ("cpu", "mem", "arrival"):
            r[k] = float(r[k])
        if r["first_bind"] is not None:
            r["first_bind"] = float(r["first_bind"])
        r["pod"] = str(r["pod"])
        frame.pod_rows.append(r)
    frame.restart_rows = read("restart_log")
    return frame
