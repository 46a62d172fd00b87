"""A small reverse-mode autodiff core on top of numpy.

Every forward op records its parents and a closure that maps the output
gradient to parent gradients; ``Tensor.backward`` walks that tape in reverse
topological order. Only float64 is used.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # construction helpers -------------------------------------------------
    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents: tuple["Tensor", ...], backward) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=needs,
                      _parents=parents if needs else (), _backward=backward if needs else None)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # elementwise arithmetic -----------------------------------------------
    def __add__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return self._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
        return self._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def square(self):
        a = self
        return self._make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))

    def __matmul__(self, other):
        other = self._wrap(other)
        a, b = self, other
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must be at least 2-D")

        if b.ndim == 2 and a.ndim > 2:
            # fold leading dims so the weight gradient is a single 2-D product
            def back(g):
                a2 = a.data.reshape(-1, a.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                return g @ b.data.T, a2.T @ g2
            return self._make(a.data @ b.data, (a, b), back)

        def back(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        return self._make(a.data @ b.data, (a, b), back)

    # activations ----------------------------------------------------------
    def relu(self):
        a = self
        mask = a.data > 0
        return self._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def sigmoid(self):
        a = self
        z = np.exp(-np.abs(a.data))
        out = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        # keep saturated outputs strictly inside (0, 1)
        out = np.clip(out, _SIG_LO, _SIG_HI)
        return self._make(out, (a,), lambda g: (g * out * (1.0 - out),))

    # reductions and shape ops ---------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)
        return self._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __getitem__(self, idx):
        a = self

        def back(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)
        return self._make(a.data[idx], (a,), back)

    def reshape(self, *shape):
        a = self
        return self._make(a.data.reshape(*shape), (a,), lambda g: (g.reshape(a.shape),))

    @property
    def T(self):
        a = self
        return self._make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))

    # reverse pass ---------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [Tensor._wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))
    return ts[0]._make(data, tuple(ts), back)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# layers --------------------------------------------------------------------

ACTIVATIONS = ("ReLU", "Sigmoid", "Identity")


@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]
    activation: str = "Identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"inconsistent layer shapes {self.weight.shape} / {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        bound = 1.0 / np.sqrt(in_dim)
        return cls(parameter(rng.uniform(-bound, bound, (out_dim, in_dim))),
                   parameter(rng.uniform(-bound, bound, out_dim)), activation)

    def __call__(self, x) -> Tensor:
        return forward_dense(self, x)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b over the last axis of ``x`` as a single graph node."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ w.data.T + b.data).reshape(*lead, w.shape[0])

    def back(g):
        g2 = g.reshape(-1, w.shape[0])
        return (g2 @ w.data).reshape(x.shape), g2.T @ x2, g2.sum(axis=0)
    return x._make(out, (x, w, b), back)


def forward_dense(layer: DenseLayer, x) -> Tensor:
    x = Tensor._wrap(x)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"layer expects input dim {layer.in_dim}, got {x.shape}")
    out = linear(x, layer.weight, layer.bias)
    if layer.activation == "ReLU":
        return out.relu()
    if layer.activation == "Sigmoid":
        return out.sigmoid()
    return out


class ParamStore:
    """Ordered name -> parameter tensor mapping; grads live on the tensors."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def add_layer(self, prefix: str, layer: DenseLayer):
        self.add(f"{prefix}.weight", layer.weight)
        self.add(f"{prefix}.bias", layer.bias)

    def merge(self, prefix: str, other: "ParamStore"):
        for name, t in other.items():
            self.add(f"{prefix}.{name}" if prefix else name, t)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self._params.items()}

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_arrays(self, arrays, strict: bool = True):
        for k, t in self._params.items():
            if k not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {k}")
                continue
            src = np.asarray(arrays[k], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ShapeError(f"{k}: expected {t.data.shape}, got {src.shape}")
            t.data = src.copy()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


class Adam:
    """Adaptive-moment optimizer; ``step`` clears gradients afterwards."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, lr: float) -> ParamStore:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in store.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grad()
        return store


def optim_step(store: ParamStore, lr: float, optimizer: Adam | None = None) -> ParamStore:
    return (optimizer or Adam()).step(store, lr)


def grad_check(f: Callable[[], Tensor], params: ParamStore, eps: float = 1e-6,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` re-runs the forward pass from the current parameter values. With
    ``max_entries`` only that many randomly chosen entries per tensor are probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    params.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss")
    loss.backward()
    analytic = params.grads()
    params.zero_grad()
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            ana = a_flat[i]
            if not (np.isfinite(num) and np.isfinite(ana)):
                raise FloatingPointError(f"non-finite gradient at {name}[{i}]")
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst


def mse(pred: Tensor, target) -> Tensor:
    return (pred - target).square().mean()
