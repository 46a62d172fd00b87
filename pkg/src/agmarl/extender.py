"""Scheduler-extender HTTP service: filter and prioritize backed by the trained model."""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, replace
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence

from .cluster import ClusterGraph, NodeState, PodSpec, StressWeights, compute_stress
from .lexico import OBJECTIVE_INDEX, FT, SelectionConfig, StressRegime, lex_stages, regime_of
from .networks import MarlModel
from .sim import feasible_candidates
from . import weights as wfmt

log = logging.getLogger(__name__)

DEFAULT_PORT = 8888
MIN_REQUEST = 1e-6  # request-less pods fit anywhere
SCORE_WINNER, SCORE_STAGE2, SCORE_STAGE1, SCORE_OTHER = 10, 7, 4, 1


class BadRequest(ValueError):
    pass


# quantities ------------------------------------------------------------------

_CPU_RE = re.compile(r"^([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)(m?)$")
_MEM_RE = re.compile(r"^([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)([a-zA-Z]*)$")
_MEM_UNITS = {
    "": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12,
    "Ki": 1024.0, "Mi": 1024.0 ** 2, "Gi": 1024.0 ** 3, "Ti": 1024.0 ** 4,
}


def parse_cpu(q) -> float:
    """CPU quantity to millicores."""
    if isinstance(q, (int, float)):
        return float(q) * 1000.0
    m = _CPU_RE.match(str(q).strip())
    if not m:
        raise BadRequest(f"bad cpu quantity {q!r}")
    v = float(m.group(1))
    return v if m.group(2) else v * 1000.0


def parse_memory(q) -> float:
    """Memory quantity to MiB."""
    if isinstance(q, (int, float)):
        return float(q) / 1024.0 ** 2
    m = _MEM_RE.match(str(q).strip())
    if not m or m.group(2) not in _MEM_UNITS:
        raise BadRequest(f"bad memory quantity {q!r}")
    return float(m.group(1)) * _MEM_UNITS[m.group(2)] / 1024.0 ** 2


def pod_from_json(obj) -> PodSpec:
    if not isinstance(obj, dict):
        raise BadRequest("Pod must be an object")
    meta = obj.get("metadata") or {}
    spec = obj.get("spec") or {}
    containers = spec.get("containers")
    if not isinstance(containers, list):
        raise BadRequest("Pod.spec.containers must be a list")
    cpu = mem = 0.0
    for c in containers:
        req = ((c or {}).get("resources") or {}).get("requests") or {}
        if "cpu" in req:
            cpu += parse_cpu(req["cpu"])
        if "memory" in req:
            mem += parse_memory(req["memory"])
    tol = frozenset(t.get("key") for t in spec.get("tolerations") or [] if t.get("key"))
    labels = meta.get("labels") or {}
    return PodSpec(pod_id=str(meta.get("name", "")), app_label=str(labels.get("app", meta.get("name", ""))),
                   cpu_request=max(cpu, MIN_REQUEST), mem_request=max(mem, MIN_REQUEST), tolerations=tol)


def parse_args(body: bytes) -> tuple[PodSpec, list[str]]:
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BadRequest(f"invalid JSON: {e}") from None
    if not isinstance(obj, dict) or "Pod" not in obj:
        raise BadRequest("ExtenderArgs needs a Pod")
    names = obj.get("NodeNames")
    if names is None:
        items = (obj.get("Nodes") or {}).get("items")
        if items is None:
            raise BadRequest("ExtenderArgs needs NodeNames or Nodes")
        names = [((n or {}).get("metadata") or {}).get("name") for n in items]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise BadRequest("node names must be strings")
    return pod_from_json(obj["Pod"]), names


# registry and inference -------------------------------------------------------

@dataclass(frozen=True)
class NodeRegistry:
    """Snapshot of named node states; node_id doubles as the agent index."""
    nodes: Mapping[str, NodeState]
    stress_weights: StressWeights = StressWeights()

    def graph(self) -> ClusterGraph:
        states = tuple(sorted(self.nodes.values(), key=lambda n: n.node_id))
        return ClusterGraph(nodes=states, stress=compute_stress(states, self.stress_weights))


class StateSource:
    def snapshot(self) -> NodeRegistry:
        raise NotImplementedError


class StaticStateSource(StateSource):
    def __init__(self, registry: NodeRegistry):
        self._registry = registry
        self._lock = threading.Lock()

    def snapshot(self) -> NodeRegistry:
        with self._lock:
            return self._registry

    def update(self, registry: NodeRegistry):
        with self._lock:
            self._registry = registry


class LiveStateSource(StateSource):
    """Placeholder for polling an orchestrator API."""

    def snapshot(self) -> NodeRegistry:
        raise NotImplementedError("live cluster state is not wired up")


def _infer(model: MarlModel, registry: NodeRegistry):
    g = registry.graph()
    ids = g.node_ids
    try:
        s = model.scores(g.feature_matrix, ids)
    except KeyError as e:
        raise BadRequest(f"model cannot score registry: {e}") from None
    return g, {i: s[k] for k, i in enumerate(ids)}


def _reason(node: NodeState, pod: PodSpec) -> str:
    if not node.ready:
        return "node-not-ready"
    if any(t not in pod.tolerations for t in node.taints):
        return "taint-not-tolerated"
    return "insufficient-resources"


def handle_filter(pod: PodSpec, names: Sequence[str], model: MarlModel, registry: NodeRegistry,
                  selection: SelectionConfig | None = None, ft_floor: float = 0.05) -> dict:
    selection = selection or SelectionConfig()
    g, scores = _infer(model, registry)
    feasible = set(feasible_candidates(g, pod))
    stressed = regime_of(g.stress, selection.thresholds) >= StressRegime.HIGH
    ok, failed = [], {}
    for name in names:
        node = registry.nodes.get(name)
        if node is None:
            failed[name] = "unknown-node"
        elif node.node_id not in feasible:
            failed[name] = _reason(node, pod)
        elif stressed and scores[node.node_id][OBJECTIVE_INDEX[FT]] < ft_floor:
            failed[name] = "low-fault-tolerance"
        else:
            ok.append(name)
    return {"Nodes": None, "NodeNames": ok, "FailedNodes": dict(sorted(failed.items())),
            "FailedAndUnresolvableNodes": {}, "Error": ""}


def handle_prioritize(pod: PodSpec, names: Sequence[str], model: MarlModel, registry: NodeRegistry,
                      selection: SelectionConfig | None = None) -> list[dict]:
    selection = selection or SelectionConfig()
    g, scores = _infer(model, registry)
    feasible = set(feasible_candidates(g, pod))
    known = [n for n in names if n in registry.nodes]
    cands = {registry.nodes[n].node_id: scores[registry.nodes[n].node_id]
             for n in known if registry.nodes[n].node_id in feasible}
    score_of: dict[int, int] = {}
    if cands:
        c0, c1, c2, c3 = (set(s) for s in lex_stages(cands, g.stress, selection))
        winner = min(c3)
        for i in c0:
            score_of[i] = (SCORE_WINNER if i == winner else SCORE_STAGE2 if i in c2
                           else SCORE_STAGE1 if i in c1 else SCORE_OTHER)
    return [{"Host": n, "Score": score_of.get(registry.nodes[n].node_id, SCORE_OTHER)} for n in known]


def dumps(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode()


# HTTP service ---------------------------------------------------------------

class ModelSlot:
    """The served (model, version) pair, swapped atomically on reload."""

    def __init__(self, model: MarlModel, path: str | None = None):
        self._state = (model, 1, path)
        self._lock = threading.Lock()

    def get(self) -> tuple[MarlModel, int, str | None]:
        return self._state

    def reload(self, path: str | None = None) -> int:
        with self._lock:
            _, version, old = self._state
            path = path or old
            if path is None:
                raise wfmt.WeightsFormatError("no weights path to reload from")
            model = MarlModel.from_arrays(wfmt.load(path))
            self._state = (model, version + 1, path)
            return version + 1


class ExtenderServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, slot: ModelSlot, source: StateSource,
                 selection: SelectionConfig | None = None, ft_floor: float = 0.05):
        self.slot = slot
        self.source = source
        self.selection = selection or SelectionConfig()
        self.ft_floor = ft_floor
        super().__init__(addr, _Handler)


class _Handler(BaseHTTPRequestHandler):
    server: ExtenderServer

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/healthz":
            return self._send(HTTPStatus.NOT_FOUND, dumps({"Error": "not found"}))
        _, version, _ = self.server.slot.get()
        self._send(HTTPStatus.OK, dumps({"status": "ok", "model_version": version}))

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        srv = self.server
        try:
            if self.path == "/reload":
                req = json.loads(body) if body.strip() else {}
                try:
                    version = srv.slot.reload(req.get("path"))
                except (OSError, KeyError, ValueError) as e:
                    return self._send(HTTPStatus.BAD_REQUEST, dumps({"Error": str(e)}))
                return self._send(HTTPStatus.OK, dumps({"model_version": version}))
            if self.path not in ("/filter", "/prioritize"):
                return self._send(HTTPStatus.NOT_FOUND, dumps({"Error": "not found"}))
            pod, names = parse_args(body)
            model, _, _ = srv.slot.get()
            registry = srv.source.snapshot()
            if self.path == "/filter":
                out = handle_filter(pod, names, model, registry, srv.selection, srv.ft_floor)
            else:
                out = handle_prioritize(pod, names, model, registry, srv.selection)
            self._send(HTTPStatus.OK, dumps(out))
        except (BadRequest, json.JSONDecodeError, ValueError) as e:
            self._send(HTTPStatus.BAD_REQUEST, dumps({"Error": str(e)}))


def make_server(slot: ModelSlot, source: StateSource, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                **kw) -> ExtenderServer:
    return ExtenderServer((host, port), slot, source, **kw)


def registry_from_graph(g: ClusterGraph, prefix: str = "node-") -> NodeRegistry:
    return NodeRegistry({f"{prefix}{n.node_id}": n for n in g.nodes})


def with_stress_weights(reg: NodeRegistry, w: StressWeights) -> NodeRegistry:
    return replace(reg, stress_weights=w)
