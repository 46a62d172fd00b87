"""Stress-aware lexicographic node selection over per-node objective scores."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

FT, UTIL, COST = "FT", "UTIL", "COST"
OBJECTIVES = (FT, UTIL, COST)
OBJECTIVE_INDEX = {FT: 0, UTIL: 1, COST: 2}


class NoFeasibleNode(LookupError):
    pass


class StressRegime(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2
    EXTREME = 3


REGIME_THRESHOLDS = (0.25, 0.5, 0.75)


def regime_of(stress: float, thresholds: Sequence[float] = REGIME_THRESHOLDS) -> StressRegime:
    if not 0.0 <= stress <= 1.0:
        raise ValueError(f"stress {stress} outside [0, 1]")
    level = sum(1 for t in thresholds if stress >= t)
    return StressRegime(level)


def default_ordering_table() -> dict[StressRegime, tuple[str, str, str]]:
    normal = (UTIL, COST, FT)
    stressed = (FT, COST, UTIL)
    return {
        StressRegime.LOW: normal,
        StressRegime.MEDIUM: normal,
        StressRegime.HIGH: stressed,
        StressRegime.EXTREME: stressed,
    }


@dataclass
class SelectionConfig:
    delta_lex: float = 0.05
    ordering_table: dict = field(default_factory=default_ordering_table)
    thresholds: tuple[float, float, float] = REGIME_THRESHOLDS

    def __post_init__(self):
        if not 0.0 <= self.delta_lex < 1.0:
            raise ValueError("delta_lex must lie in [0, 1)")
        table = {}
        for regime in StressRegime:
            order = self.ordering_table.get(regime, self.ordering_table.get(regime.name))
            if order is None or sorted(order) != sorted(OBJECTIVES):
                raise ValueError(f"ordering for {regime.name} must permute {OBJECTIVES}")
            table[regime] = tuple(order)
        self.ordering_table = table

    def ordering(self, stress: float) -> tuple[str, str, str]:
        return self.ordering_table[regime_of(stress, self.thresholds)]


def lex_stages(candidates: Mapping[int, Sequence[float]], stress: float,
               cfg: SelectionConfig) -> list[list[int]]:
    """The nested candidate sets [C_0, C_1, C_2, C_3], each sorted by node id."""
    if not candidates:
        raise NoFeasibleNode("empty candidate set")
    current = sorted(candidates)
    stages = [current]
    for objective in cfg.ordering(stress):
        j = OBJECTIVE_INDEX[objective]
        best = max(candidates[c][j] for c in current)
        floor = (1.0 - cfg.delta_lex) * best
        current = [c for c in current if candidates[c][j] >= floor]
        stages.append(current)
    return stages


def lex_select(candidates: Mapping[int, Sequence[float]], stress: float,
               cfg: SelectionConfig | None = None) -> int:
    return lex_stages(candidates, stress, cfg or SelectionConfig())[-1][0]
