"""Global JSON configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .cluster import DEFAULT_COST_TABLE, ConfigError, CostClass, StressWeights
from .lexico import REGIME_THRESHOLDS, SelectionConfig, StressRegime, default_ordering_table
from .scenarios import AdmissionCap
from .sim import AutoscaleConfig, ClusterConfig, EnvConfig, PoolConfig, StressPoolConfig
from .training import Hyperparams
from .workloads import WorkloadConfig, toy_cluster


@dataclass(frozen=True)
class SelectionSection:
    delta_lex: float = 0.05
    ordering: dict = field(default_factory=lambda: {r.name: list(o) for r, o in default_ordering_table().items()})
    thresholds: tuple[float, float, float] = REGIME_THRESHOLDS

    def build(self) -> SelectionConfig:
        return SelectionConfig(self.delta_lex, dict(self.ordering), tuple(self.thresholds))


@dataclass(frozen=True)
class EnvSection:
    retry_interval_s: float = 10.0
    pressure_free_frac: float = 0.10
    oom_pressure_s: float = 120.0
    restart_window_s: float = 3600.0


@dataclass(frozen=True)
class TrainingSection:
    toy_nodes: int | None = None  # fixed-size Standard cluster instead of the scenario cluster
    model_seed_offset: int = 0
    workload: WorkloadConfig = WorkloadConfig()


@dataclass(frozen=True)
class GlobalConfig:
    hyperparams: Hyperparams = Hyperparams()
    selection: SelectionSection = SelectionSection()
    cluster: ClusterConfig = ClusterConfig()
    cost_table: dict = field(default_factory=lambda: {k.value: v for k, v in DEFAULT_COST_TABLE.items()})
    stress_weights: StressWeights = StressWeights()
    admission: AdmissionCap = AdmissionCap()
    env: EnvSection = EnvSection()
    training: TrainingSection = TrainingSection()
    ft_floor: float = 0.05
    output_dir: str | None = None

    def __post_init__(self):
        try:
            table = {CostClass(k): float(v) for k, v in self.cost_table.items()}
        except ValueError as e:
            raise ConfigError(f"cost_table: {e}") from None
        if any(v <= 0 for v in table.values()) or set(table) != set(CostClass):
            raise ConfigError("cost_table needs a positive cost for every cost class")
        self.selection.build()

    def cost_table_enum(self) -> dict:
        return {CostClass(k): float(v) for k, v in self.cost_table.items()}

    def env_config(self) -> EnvConfig:
        return EnvConfig(retry_interval_s=self.env.retry_interval_s,
                         pressure_free_frac=self.env.pressure_free_frac,
                         oom_pressure_s=self.env.oom_pressure_s,
                         restart_window_s=self.env.restart_window_s,
                         stress_weights=self.stress_weights, cost_table=self.cost_table_enum())

    def training_cluster(self) -> ClusterConfig:
        n = self.training.toy_nodes
        return self.cluster if n is None else toy_cluster(n)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp[value] if isinstance(value, str) and value in tp.__members__ else tp(value)
        except (ValueError, KeyError):
            raise ConfigError(f"{path}: invalid value {value!r}") from None
    if origin is tuple or tp is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        if args and args[-1] is not Ellipsis and len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries")
        elem = args[0] if args else typing.Any
        return tuple(_convert(elem, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, str) and value in ("inf", "Infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return dict(value)
    return value


def from_dict(cls, data, path: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def load_config(path) -> GlobalConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return from_dict(GlobalConfig, data)


def to_dict(cfg) -> dict:
    def enc(x):
        if dataclasses.is_dataclass(x):
            return {f.name: enc(getattr(x, f.name)) for f in dataclasses.fields(x)}
        if isinstance(x, enum.Enum):
            return x.name if isinstance(x, StressRegime) else x.value
        if isinstance(x, (list, tuple)):
            return [enc(v) for v in x]
        if isinstance(x, dict):
            return {str(getattr(k, "value", k)): enc(v) for k, v in x.items()}
        if isinstance(x, float) and math.isinf(x):
            return "inf"
        return x
    return enc(cfg)
