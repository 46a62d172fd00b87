import numpy as np
import pytest
from hypothesis import given, strategies as st

from agmarl.lexico import (COST, FT, UTIL, NoFeasibleNode, SelectionConfig, StressRegime,
                           default_ordering_table, lex_select, lex_stages, regime_of)

IDX = {FT: 0, UTIL: 1, COST: 2}


def oracle(cands, order, delta):
    """Exhaustive stage construction: for each stage rebuild the surviving set from scratch."""
    stages = [set(cands)]
    for obj in order:
        prev = stages[-1]
        best = max(cands[c][IDX[obj]] for c in prev)
        stages.append({c for c in prev if cands[c][IDX[obj]] >= (1 - delta) * best})
    return stages, min(stages[-1])


def test_regime_examples():
    assert regime_of(0.0) is StressRegime.LOW
    assert regime_of(0.25) is StressRegime.MEDIUM
    assert regime_of(0.5) is StressRegime.HIGH
    assert regime_of(0.9) is StressRegime.EXTREME
    with pytest.raises(ValueError):
        regime_of(1.2)


def test_default_orderings():
    t = default_ordering_table()
    assert t[StressRegime.HIGH] == (FT, COST, UTIL)
    assert t[StressRegime.LOW] == (UTIL, COST, FT)
    assert t[StressRegime.MEDIUM] == (UTIL, COST, FT)
    assert t[StressRegime.EXTREME] == (FT, COST, UTIL)
    assert all(sorted(v) == sorted((FT, UTIL, COST)) for v in t.values())


def test_lex_select_examples():
    cfg = SelectionConfig(delta_lex=0.0)
    assert lex_select({4: [0.1, 0.2, 0.3]}, 0.1) == 4
    # stress 0.6 -> High ordering [FT, COST, UTIL]; FT decides outright
    assert lex_select({0: [0.9, 0.1, 0.1], 1: [0.8, 0.9, 0.9]}, 0.6, cfg) == 0
    cfg = SelectionConfig(0.05, {r: (FT, UTIL, COST) for r in StressRegime})
    assert lex_select({0: [0.96, 0.2, 0.5], 1: [1.0, 0.9, 0.1]}, 0.0, cfg) == 1
    assert lex_select({3: [0.5] * 3, 1: [0.5] * 3, 2: [0.5] * 3}, 0.9) == 1


def test_empty_candidates():
    with pytest.raises(NoFeasibleNode):
        lex_select({}, 0.3)


def test_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(delta_lex=1.0)
    with pytest.raises(ValueError):
        SelectionConfig(ordering_table={r: (FT, FT, COST) for r in StressRegime})
    cfg = SelectionConfig(ordering_table={r.name: (COST, FT, UTIL) for r in StressRegime})
    assert cfg.ordering(0.8) == (COST, FT, UTIL)


def test_matches_oracle_randomised():
    r = np.random.default_rng(0)
    for _ in range(2000):
        n = int(r.integers(1, 7))
        ids = r.choice(20, n, replace=False).tolist()
        # coarse grid so that ties and band edges actually occur
        cands = {i: np.round(r.uniform(0, 1, 3) * 8) / 8 for i in ids}
        delta = float(r.choice([0.0, 0.05, 0.2]))
        stress = float(r.uniform())
        cfg = SelectionConfig(delta)
        stages, win = oracle(cands, cfg.ordering(stress), delta)
        got = lex_stages(cands, stress, cfg)
        assert [set(s) for s in got] == stages
        assert lex_select(cands, stress, cfg) == win


@given(st.dictionaries(st.integers(0, 50), st.tuples(*[st.floats(0.001, 0.999)] * 3), min_size=1, max_size=6),
       st.floats(0, 1), st.sampled_from([0.0, 0.05, 0.2]))
def test_nested_and_member(cands, stress, delta):
    stages = lex_stages(cands, stress, SelectionConfig(delta))
    for a, b in zip(stages, stages[1:]):
        assert set(b) <= set(a)
    assert stages[-1]
    assert lex_select(cands, stress, SelectionConfig(delta)) in cands


@given(st.dictionaries(st.integers(0, 20), st.tuples(*[st.floats(0.01, 0.99)] * 3), min_size=1, max_size=6),
       st.floats(0, 1), st.floats(0.1, 10), st.floats(-0.5, 0.5), st.integers(0, 2))
def test_affine_invariance_strict(cands, stress, scale, shift, j):
    cfg = SelectionConfig(0.0)
    moved = {}
    for i, s in cands.items():
        s = list(s)
        s[j] = scale * s[j] + shift
        moved[i] = s
    assert lex_select(cands, stress, cfg) == lex_select(moved, stress, cfg)


@given(st.dictionaries(st.integers(0, 20), st.tuples(*[st.floats(0.01, 0.99)] * 3), min_size=1, max_size=6),
       st.floats(0, 1), st.sampled_from([1.0, 2.0, 0.5, 4.0]), st.integers(0, 2))
def test_scaling_preserves_tolerance_sets(cands, stress, scale, j):
    # power-of-two scales keep the float comparison exact
    cfg = SelectionConfig(0.05)
    moved = {i: [v * scale if k == j else v for k, v in enumerate(s)] for i, s in cands.items()}
    assert lex_stages(cands, stress, cfg) == lex_stages(moved, stress, cfg)
