import numpy as np
import pytest
from hypothesis import given, strategies as st

from agmarl.diff import (Adam, DenseLayer, ParamStore, ShapeError, Tensor, concat, forward_dense,
                         grad_check, mse, optim_step, parameter)


def layer(w, b, act):
    return DenseLayer(parameter(w), parameter(b), act)


def test_forward_dense_examples():
    out = forward_dense(layer(np.eye(2), np.zeros(2), "Identity"), [1.0, 2.0])
    assert out.data.tolist() == [1.0, 2.0]
    out = forward_dense(layer(np.zeros((3, 4)), np.zeros(3), "Sigmoid"), [5.0, -2.0, 1.0, 9.0])
    assert out.data.tolist() == [0.5, 0.5, 0.5]
    out = forward_dense(layer([[1.0, -1.0]], [0.5], "ReLU"), [2.0, 1.0])
    assert out.data.tolist() == [1.5]


def test_forward_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        forward_dense(layer(np.eye(2), np.zeros(2), "ReLU"), [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        layer(np.eye(2), np.zeros(3), "ReLU")


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.integers(0, 2 ** 31))
def test_sigmoid_open_interval(x, seed):
    r = np.random.default_rng(seed)
    out = forward_dense(DenseLayer.init(3, 4, "Sigmoid", r), x).data
    assert ((out > 0) & (out < 1)).all()


def test_backward_examples():
    w = parameter(2.0)
    (w * 3.0).backward()
    assert w.grad == 3.0

    w = parameter(0.0)
    w.sigmoid().square().backward()
    assert w.grad == pytest.approx(0.25)

    a, b = parameter(1.0), parameter(1.0)
    (a * 2.0).backward()
    store = ParamStore([("a", a), ("b", b)])
    assert store.grads()["b"] == 0.0


def test_backward_needs_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_backward_deterministic():
    r = np.random.default_rng(0)
    l1 = DenseLayer.init(5, 4, "ReLU", r)
    x = r.normal(size=(7, 5))
    grads = []
    for _ in range(2):
        l1.weight.grad = l1.bias.grad = None
        mse(forward_dense(l1, x), np.ones((7, 4))).backward()
        grads.append(l1.weight.grad.copy())
    assert np.array_equal(grads[0], grads[1])


def test_concat_and_indexing_grads():
    r = np.random.default_rng(3)
    a, b = parameter(r.normal(size=(2, 3))), parameter(r.normal(size=(2, 2)))
    store = ParamStore([("a", a), ("b", b)])
    f = lambda: (concat([a, b], axis=-1)[:, 1:4] * np.arange(6.0).reshape(2, 3)).sum()
    assert grad_check(f, store) < 1e-7


def test_grad_check_quadratic_and_constant():
    r = np.random.default_rng(1)
    p = parameter(r.normal(size=(3, 2)))
    store = ParamStore([("p", p)])
    assert grad_check(lambda: (p * p).sum() * 0.5 + p.sum(), store, eps=1e-5) < 1e-6
    q = parameter(r.normal(size=4))
    const = ParamStore([("q", q)])
    assert grad_check(lambda: Tensor(3.0) + q.sum() * 0.0, const) == 0.0
    with pytest.raises(ValueError):
        grad_check(lambda: p.sum(), store, eps=1e-2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_mlp(seed):
    r = np.random.default_rng(seed)
    layers = [DenseLayer.init(6, 8, "ReLU", r), DenseLayer.init(8, 3, "Sigmoid", r)]
    store = ParamStore()
    for k, l in enumerate(layers):
        store.add_layer(f"l{k}", l)
    x = r.normal(size=(4, 6))
    y = r.uniform(size=(4, 3))

    def f():
        h = x
        for l in layers:
            h = l(h)
        return mse(h, y)
    assert grad_check(f, store) < 1e-4


def test_adam_examples():
    p = parameter([1.0, 2.0])
    store = ParamStore([("p", p)])
    optim_step(store, 0.001)
    assert p.data.tolist() == [1.0, 2.0]

    w = parameter(1.0)
    store = ParamStore([("w", w)])
    w.grad = np.array(1.0)
    optim_step(store, 0.001)
    assert float(w.data) == pytest.approx(0.999, abs=1e-8)
    assert w.grad is None


def test_adam_convex_quadratic_decreases():
    r = np.random.default_rng(2)
    target = r.normal(size=5)
    p = parameter(np.zeros(5))
    store = ParamStore([("p", p)])
    opt = Adam()
    losses = []
    for _ in range(100):
        loss = mse(p, target)
        losses.append(loss.item())
        loss.backward()
        opt.step(store, 0.01)
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_param_store_load_arrays_checks_shape():
    store = ParamStore([("a", parameter(np.zeros(3)))])
    with pytest.raises(ShapeError):
        store.load_arrays({"a": np.zeros(4)})
    with pytest.raises(KeyError):
        store.load_arrays({})
    with pytest.raises(KeyError):
        store.add("a", parameter(1.0))
