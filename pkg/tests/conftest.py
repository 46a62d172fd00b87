import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from agmarl.cluster import NodeState, with_stress
from agmarl.networks import MarlModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).parent / "fixtures"


def make_graph(specs, **kw):
    """specs: list of dicts of NodeState fields (node_id filled in by position)."""
    nodes = []
    for i, s in enumerate(specs):
        s = dict(s)
        s.setdefault("cpu_capacity", 4000.0)
        s.setdefault("mem_capacity", 16384.0)
        nodes.append(NodeState(node_id=i, **s))
    return with_stress(nodes, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    return MarlModel.init(4, np.random.default_rng(5))


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())
