import numpy as np
import pytest

from agmarl.diff import ParamStore, ShapeError, Tensor, grad_check, parameter
from agmarl.gnn import GnnEncoder, GnnLayer, build_observation, gnn_forward, gnn_forward_batch
from conftest import make_graph


def test_zero_weights_give_zero_embeddings():
    enc = GnnEncoder.init(np.random.default_rng(0))
    for l in enc.layers:
        l.w_self.data[:] = 0
        l.w_neigh.data[:] = 0
    g = make_graph([{"cpu_allocated": 100.0}, {}, {"memory_pressure": True}])
    emb = gnn_forward(g, enc.layers)
    assert all(np.array_equal(e, np.zeros(16)) for e in emb.values())


def test_identical_nodes_identical_embeddings():
    enc = GnnEncoder.init(np.random.default_rng(1))
    emb = gnn_forward(make_graph([{"cpu_allocated": 1000.0}] * 4), enc.layers)
    for e in emb.values():
        assert np.allclose(e, emb[0], atol=1e-14)


def test_hand_computed_single_layer():
    w1 = np.array([[1.0, 0.0], [0.5, -1.0]])
    w2 = np.array([[0.0, 2.0], [1.0, 1.0]])
    layer = GnnLayer(parameter(w1), parameter(w2))
    h = np.array([[1.0, 2.0], [3.0, 0.0], [0.0, 1.0]])
    out = gnn_forward_batch(h, [layer]).data
    for i in range(3):
        others = np.mean([h[j] for j in range(3) if j != i], axis=0)
        expect = np.maximum(w1 @ h[i] + w2 @ others, 0.0)
        assert np.allclose(out[i], expect, atol=1e-14)


def test_single_node_zero_message():
    layer = GnnLayer(parameter(np.eye(2)), parameter(np.full((2, 2), 7.0)))
    out = gnn_forward_batch(np.array([[1.0, 2.0]]), [layer]).data
    assert out.tolist() == [[1.0, 2.0]]


def test_dimension_checks():
    with pytest.raises(ShapeError):
        GnnEncoder([GnnLayer(parameter(np.ones((3, 2))), parameter(np.ones((3, 2)))),
                    GnnLayer(parameter(np.ones((2, 4))), parameter(np.ones((2, 4))))])
    enc = GnnEncoder.init(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        enc(np.zeros((3, 9)))


def test_permutation_equivariance():
    r = np.random.default_rng(2)
    enc = GnnEncoder.init(r)
    x = r.uniform(size=(5, 10))
    perm = r.permutation(5)
    a = enc(x).data
    b = enc(x[perm]).data
    assert np.allclose(a[perm], b, atol=1e-12)


def test_other_nodes_influence_embedding():
    r = np.random.default_rng(3)
    enc = GnnEncoder.init(r)
    x = r.uniform(size=(4, 10))
    base = enc(x).data[0]
    x2 = x.copy()
    x2[3] += 0.3
    assert np.abs(enc(x2).data[0] - base).max() > 1e-6


def test_padding_mask_matches_unpadded():
    r = np.random.default_rng(4)
    enc = GnnEncoder.init(r)
    x = r.uniform(size=(3, 10))
    padded = np.vstack([x, np.zeros((2, 10))])
    out = enc(padded, mask=np.array([1, 1, 1, 0, 0])).data
    assert np.allclose(out[:3], enc(x).data, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gnn_grad_check(seed):
    r = np.random.default_rng(seed)
    enc = GnnEncoder.init(r)
    x = r.uniform(size=(4, 10))
    target = r.uniform(size=(4, 16))
    store = enc.params()
    assert grad_check(lambda: ((enc(x) - target).square()).mean(), store, max_entries=40, rng=r) < 1e-4


def test_build_observation():
    g = make_graph([{}, {}])
    obs = build_observation(1, g, {0: np.zeros(16), 1: np.zeros(16)})
    assert obs.shape == (26,)
    x = np.full(10, 0.1)
    e = {0: np.full(16, 0.2)}
    from agmarl.gnn import observations
    o = observations(Tensor(x[None]), Tensor(e[0][None])).data[0]
    assert o[:10].tolist() == [0.1] * 10 and o[10:].tolist() == [0.2] * 16
    with pytest.raises(KeyError):
        build_observation(5, g, {})
