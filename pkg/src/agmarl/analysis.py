"""Comparative analysis over metrics frames: matrices, correlations, scalars and charts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scenarios import MetricsFrame, frame_prefix

PEARSON_FIELDS = ("cpu_requested", "mem_requested_gb", "failures", "restarts", "cost")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample correlation; NaN when either column has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length columns with at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson_matrix(columns: dict[str, Sequence[float]]) -> tuple[list[str], np.ndarray]:
    names = list(columns)
    k = len(names)
    out = np.full((k, k), math.nan)
    for i in range(k):
        for j in range(i, k):
            r = pearson(columns[names[i]], columns[names[j]])
            if i == j and not math.isnan(r):
                r = 1.0
            out[i, j] = out[j, i] = r
    return names, out


def pair_columns(frame: MetricsFrame) -> dict[str, list[float]]:
    """Per-node rows at every sample, the basis of the correlation and pair plots."""
    rows = frame.node_rows
    return {
        "cpu_requested": [r["cpu_requested"] for r in rows],
        "mem_requested_gb": [r["mem_requested"] / 1024.0 for r in rows],
        "failures": [float(r["failures"]) for r in rows],
        "restarts": [float(r["restarts"]) for r in rows],
        "cost": [r["cost"] for r in rows],
    }


def _rows_at(frame: MetricsFrame, t: float) -> list[dict]:
    times = sorted({r["time"] for r in frame.node_rows if r["time"] <= t + 1e-9})
    if not times:
        return []
    last = times[-1]
    return sorted((r for r in frame.node_rows if r["time"] == last), key=lambda r: r["node"])


def distribution_matrix(frame: MetricsFrame, t: float | None = None):
    """Running pods per (app, node) at time ``t`` (default: end of run)."""
    t = frame.times()[-1] if t is None else t
    rows = _rows_at(frame, t)
    nodes = [r["node"] for r in rows]
    apps = frame.apps
    m = np.array([[r["pods"].get(a, 0) for r in rows] for a in apps], dtype=int).reshape(len(apps), len(nodes))
    return apps, nodes, m


def cpu_by_app(frame: MetricsFrame, t: float | None = None):
    apps, nodes, counts = distribution_matrix(frame, t)
    cpu = {r["app"]: r["cpu"] for r in frame.pod_rows}
    # mean request per app; jittered apps differ per pod so use the bound pods' mean
    by_app: dict[str, list[float]] = {}
    for r in frame.pod_rows:
        by_app.setdefault(r["app"], []).append(r["cpu"])
    mean_cpu = np.array([np.mean(by_app.get(a, [cpu.get(a, 0.0)])) for a in apps])
    return apps, nodes, counts * mean_cpu[:, None]


def phase_snapshots(frame: MetricsFrame) -> list[dict]:
    out = []
    for ph in frame.phases:
        for r in _rows_at(frame, ph["end_s"] - frame.interval_s):
            out.append({"phase": ph["name"], "node": r["node"], "util": r["util"],
                        "cpu_requested": r["cpu_requested"], "mem_requested": r["mem_requested"]})
    return out


def restart_heatmap(frame: MetricsFrame):
    apps = sorted({r["app"] for r in frame.restart_rows} | set(frame.apps))
    nodes = sorted({r["node"] for r in frame.node_rows})
    m = np.zeros((len(apps), len(nodes)), dtype=int)
    for r in frame.restart_rows:
        m[apps.index(r["app"]), nodes.index(r["node"])] += int(r["restarts"])
    return apps, nodes, m


def packing_index(frame: MetricsFrame, phase: str | None = None) -> float:
    """Mean over the phase's samples of the population stdev of node utilisation."""
    ph = _phase(frame, phase)
    by_t: dict[float, list[float]] = {}
    for r in frame.node_rows:
        if ph["start_s"] <= r["time"] < ph["end_s"]:
            by_t.setdefault(r["time"], []).append(r["util"])
    if not by_t:
        return math.nan
    return float(np.mean([np.std(v) for _, v in sorted(by_t.items())]))


def _phase(frame: MetricsFrame, name: str | None) -> dict:
    if name is None:
        return max(frame.phases, key=lambda p: p["start_s"])
    for p in frame.phases:
        if p["name"] == name:
            return p
    raise KeyError(f"no phase {name!r}")


def max_restarts_per_node(frame: MetricsFrame, app: str | None = None) -> int:
    per_node: dict[int, int] = {}
    for r in frame.restart_rows:
        if app is None or r["app"] == app:
            per_node[r["node"]] = per_node.get(r["node"], 0) + int(r["restarts"])
    return max(per_node.values(), default=0)


def burst_clearance(frame: MetricsFrame) -> float | None:
    """Longest arrival-to-bind wait over Burst pods; unbound pods wait until the end."""
    end = frame.times()[-1]
    waits = [(r["first_bind"] if r["first_bind"] is not None else end) - r["arrival"]
             for r in frame.pod_rows if r["priority"] == "Burst"]
    return max(waits) if waits else None


def phase_pod_spread(frame: MetricsFrame, phase: str | None = None, pool: str | None = "baseline") -> int:
    """max - min pods of the phase's app across nodes (of ``pool``) at the end of the phase."""
    ph = _phase(frame, phase or frame.phases[0]["name"])
    rows = [r for r in _rows_at(frame, ph["end_s"] - frame.interval_s)
            if pool is None or r["pool"] == pool]
    counts = [sum(r["pods"].get(a, 0) for a in ph["apps"]) for r in rows]
    return max(counts) - min(counts) if counts else 0


def summary_scalars(frame: MetricsFrame) -> dict:
    fault_apps = sorted({r["app"] for r in frame.restart_rows})
    return {
        "packing_index": packing_index(frame),
        "max_restarts_per_node": max_restarts_per_node(frame),
        "max_restarts_per_node_by_app": {a: max_restarts_per_node(frame, a) for a in fault_apps},
        "burst_clearance_s": burst_clearance(frame),
        "total_cost": frame.cluster_rows[-1]["cost"] if frame.cluster_rows else 0.0,
        "first_phase_pod_spread": phase_pod_spread(frame),
        "deferrals": frame.deferrals,
    }


@dataclass
class AnalysisBundle:
    frame: MetricsFrame
    distribution: tuple
    cpu_stack: tuple
    phases: list[dict]
    restarts: tuple
    pearson: tuple
    pairs: dict
    scalars: dict = field(default_factory=dict)


def analyze(frame: MetricsFrame) -> AnalysisBundle:
    if not frame.node_rows:
        raise ValueError("empty metrics frame")
    pairs = pair_columns(frame)
    return AnalysisBundle(frame, distribution_matrix(frame), cpu_by_app(frame), phase_snapshots(frame),
                          restart_heatmap(frame), pearson_matrix(pairs), pairs, summary_scalars(frame))


# output ----------------------------------------------------------------------

def _cell(v):
    if isinstance(v, float) and math.isnan(v):
        return "NA"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_matrix(path: Path, rows: Sequence[str], cols: Sequence, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + [str(c) for c in cols])
        for name, row in zip(rows, np.asarray(m).tolist()):
            w.writerow([name] + [_cell(v) for v in row])


def json_safe(x):
    if isinstance(x, dict):
        return {str(k): json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if math.isnan(x) else float(x)
    return x


def write_bundle(b: AnalysisBundle, outdir, charts: bool = True) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pre = frame_prefix(b.frame)
    paths = []
    apps, nodes, m = b.distribution
    paths.append(outdir / f"{pre}_distribution.csv")
    _write_matrix(paths[-1], apps, nodes, m)
    apps_c, nodes_c, cpu = b.cpu_stack
    paths.append(outdir / f"{pre}_cpu_by_app.csv")
    _write_matrix(paths[-1], apps_c, nodes_c, cpu)
    paths.append(outdir / f"{pre}_phase_util.csv")
    with open(paths[-1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "node", "util", "cpu_requested", "mem_requested"])
        for r in b.phases:
            w.writerow([r["phase"], r["node"], _cell(r["util"]), _cell(r["cpu_requested"]),
                        _cell(r["mem_requested"])])
    r_apps, r_nodes, rm = b.restarts
    paths.append(outdir / f"{pre}_restarts.csv")
    _write_matrix(paths[-1], r_apps, r_nodes, rm)
    names, pm = b.pearson
    paths.append(outdir / f"{pre}_pearson.csv")
    _write_matrix(paths[-1], names, names, pm)
    paths.append(outdir / f"{pre}_pairs.csv")
    with open(paths[-1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(b.pairs))
        for row in zip(*b.pairs.values()):
            w.writerow([_cell(v) for v in row])
    paths.append(outdir / f"{pre}_summary.json")
    paths[-1].write_text(json.dumps(json_safe(b.scalars), indent=1, sort_keys=True) + "\n")
    if charts:
        from . import charts as ch
        paths.append(ch.heatmap(outdir / f"{pre}_restarts.svg", r_apps, r_nodes, rm, "restarts"))
        paths.append(ch.heatmap(outdir / f"{pre}_distribution.svg", apps, nodes, m, "pods"))
        paths.append(ch.stacked_bars(outdir / f"{pre}_cpu_by_app.svg", apps_c, nodes_c, cpu))
        paths.append(ch.scatter_grid(outdir / f"{pre}_pairs.svg", b.pairs))
    return paths


def aggregate(summaries: Sequence[dict]) -> dict:
    """Mean and population stdev of every numeric scalar across runs."""
    if not summaries:
        raise ValueError("nothing to aggregate")
    out = {}
    keys = sorted(set().union(*summaries))
    for k in keys:
        vals = [s.get(k) for s in summaries]
        if all(isinstance(v, (int, float)) and v is not None and not isinstance(v, bool) for v in vals):
            arr = np.asarray(vals, dtype=np.float64)
            out[k] = {"mean": float(arr.mean()), "stdev": float(arr.std()), "n": len(vals)}
    return out
