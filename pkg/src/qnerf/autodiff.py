"""Array-valued reverse-mode differentiation for the classical half of the
pipeline (encoders, normalization, channel averaging, scaling, quadrature,
loss).

A ``Var`` wraps a float64 ndarray plus a gradient slot and a backward closure;
``backward(loss)`` topologically sorts the recorded graph and runs each
closure exactly once. Everything is vectorized: one Var typically holds a
whole batch. Broadcasting in add/mul is undone in the backward pass by
summing over the broadcast axes.

Inside a ``no_grad()`` block no graph is recorded, which keeps rendering
memory flat. All values are float64; downcasting is left to image output.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Var",
    "no_grad",
    "grad_enabled",
    "backward",
    "relu",
    "sigmoid",
    "exp",
    "clamp",
    "normalize_rows",
    "concat",
    "exclusive_cumsum",
    "affine",
    "init_mlp",
    "mlp_forward",
    "ParamStore",
]

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Var:
    """Node in the computation graph. ``value`` is always a float64 ndarray."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        if _GRAD_ENABLED:
            self._parents = parents
            self._backward = backward_fn
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            # own a copy: g may alias another node's gradient buffer
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.value.shape:
                self.grad = np.broadcast_to(self.grad, self.value.shape).copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg_any(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported; multiply by a reciprocal")
        return _mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return _sum(self, axis)

    def mean(self, axis=None):
        size = self.value.size if axis is None else self.value.shape[axis]
        return _sum(self, axis) * (1.0 / size)

    def reshape(self, *shape):
        return _reshape(self, shape if len(shape) > 1 else shape[0])

    def __getitem__(self, key):
        return _getitem(self, key)


def _as_value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _neg_any(x):
    return _neg(x) if isinstance(x, Var) else -np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _add(a, b):
    av, bv = _as_value(a), _as_value(b)
    out_val = av + bv

    def back(out):
        if isinstance(a, Var):
            a.accumulate(_unbroadcast(out.grad, av.shape))
        if isinstance(b, Var):
            b.accumulate(_unbroadcast(out.grad, bv.shape))

    parents = tuple(x for x in (a, b) if isinstance(x, Var))
    return Var(out_val, parents, back)


def _mul(a, b):
    av, bv = _as_value(a), _as_value(b)
    out_val = av * bv

    def back(out):
        if isinstance(a, Var):
            a.accumulate(_unbroadcast(out.grad * bv, av.shape))
        if isinstance(b, Var):
            b.accumulate(_unbroadcast(out.grad * av, bv.shape))

    parents = tuple(x for x in (a, b) if isinstance(x, Var))
    return Var(out_val, parents, back)


def _neg(a: Var):
    def back(out):
        a.accumulate(-out.grad)

    return Var(-a.value, (a,), back)


def matmul(a, b):
    av, bv = _as_value(a), _as_value(b)
    out_val = av @ bv

    def back(out):
        if isinstance(a, Var):
            a.accumulate(out.grad @ bv.T)
        if isinstance(b, Var):
            b.accumulate(av.T @ out.grad)

    parents = tuple(x for x in (a, b) if isinstance(x, Var))
    return Var(out_val, parents, back)


def affine(x, w, b):
    """Fused x @ w + b (bias broadcast over the batch axis); one graph node."""
    xv, wv, bv = _as_value(x), _as_value(w), _as_value(b)
    out_val = xv @ wv + bv

    def back(out):
        g = out.grad
        if isinstance(x, Var):
            x.accumulate(g @ wv.T)
        if isinstance(w, Var):
            w.accumulate(xv.T @ g)
        if isinstance(b, Var):
            b.accumulate(_unbroadcast(g, bv.shape))

    parents = tuple(p for p in (x, w, b) if isinstance(p, Var))
    return Var(out_val, parents, back)


def relu(a: Var):
    mask = a.value > 0

    def back(out):
        a.accumulate(out.grad * mask)

    return Var(a.value * mask, (a,), back)


def sigmoid(a: Var):
    out_val = 1.0 / (1.0 + np.exp(-a.value))

    def back(out):
        a.accumulate(out.grad * out_val * (1.0 - out_val))

    return Var(out_val, (a,), back)


def exp(a: Var):
    out_val = np.exp(a.value)

    def back(out):
        a.accumulate(out.grad * out_val)

    return Var(out_val, (a,), back)


def clamp(a: Var, lo: float, hi: float, inclusive: bool = True):
    """Clip to [lo, hi]. Boundary points keep unit subgradient when
    ``inclusive`` (the default), so saturated channels still receive signal."""
    if inclusive:
        mask = (a.value >= lo) & (a.value <= hi)
    else:
        mask = (a.value > lo) & (a.value < hi)

    def back(out):
        a.accumulate(out.grad * mask)

    return Var(np.clip(a.value, lo, hi), (a,), back)


def normalize_rows(a: Var, eps: float = 1e-12):
    """L2-normalize each row; rows with norm < eps map to the uniform vector
    1/sqrt(D) with zero gradient (constant output)."""
    v = a.value
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    dead = norms < eps
    safe = np.where(dead, 1.0, norms)
    y = v / safe
    if dead.any():
        y = np.where(dead, 1.0 / np.sqrt(v.shape[-1]), y)

    def back(out):
        g = out.grad
        dot = np.sum(g * y, axis=-1, keepdims=True)
        ga = (g - y * dot) / safe
        if dead.any():
            ga = np.where(dead, 0.0, ga)
        a.accumulate(ga)

    return Var(y, (a,), back)


def _sum(a: Var, axis):
    out_val = a.value.sum(axis=axis)

    def back(out):
        g = out.grad
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.value.shape))
        else:
            a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

    return Var(out_val, (a,), back)


def _reshape(a: Var, shape):
    def back(out):
        a.accumulate(out.grad.reshape(a.value.shape))

    return Var(a.value.reshape(shape), (a,), back)


def _getitem(a: Var, key):
    def back(out):
        g = np.zeros_like(a.value)
        g[key] = out.grad
        a.accumulate(g)

    return Var(a.value[key], (a,), back)


def concat(parts, axis=-1):
    vals = [_as_value(p) for p in parts]
    out_val = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def back(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Var):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                p.accumulate(out.grad[tuple(idx)])

    parents = tuple(p for p in parts if isinstance(p, Var))
    return Var(out_val, parents, back)


def exclusive_cumsum(a: Var, axis: int = -1):
    """y_i = sum_{j < i} x_j along ``axis`` (y_0 = 0)."""
    v = a.value
    cs = np.cumsum(v, axis=axis)
    out_val = cs - v  # shift right by one

    def back(out):
        g = out.grad
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        a.accumulate(rev - g)

    return Var(out_val, (a,), back)


def backward(root: Var):
    """Run reverse-mode accumulation from a scalar (or any) root Var."""
    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)
        # free closures as we go so big intermediate buffers can be collected
        node._backward = None
        node._parents = ()


def init_mlp(store: "ParamStore", prefix: str, dims, rng) -> None:
    """Affine stack with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init."""
    for i, (fin, fout) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fin)
        store.add(f"{prefix}.w{i}", rng.uniform(-bound, bound, (fin, fout)))
        store.add(f"{prefix}.b{i}", rng.uniform(-bound, bound, (fout,)))


def mlp_forward(store: "ParamStore", prefix: str, x, n_layers: int,
                final_relu: bool) -> Var:
    """ReLU between layers; optionally ReLU on the output (amplitude heads)."""
    h = x
    for i in range(n_layers):
        h = affine(h, store[f"{prefix}.w{i}"], store[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = relu(h)
    return relu(h) if final_relu else h


class ParamStore:
    """Named trainable leaves. Values live in Vars so the same objects are
    reused across forward passes; gradients accumulate until zero_grad()."""

    def __init__(self):
        self._params: dict[str, Var] = {}

    def add(self, name: str, value) -> Var:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        var = Var(np.array(value, dtype=np.float64))
        self._params[name] = var
        return var

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for v in self._params.values():
            v.grad = None

    def n_values(self) -> int:
        return sum(v.value.size for v in self._params.values())

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters in checkpoint: {sorted(missing)}")
        for k, v in self._params.items():
            arr = np.asarray(arrays[k], dtype=np.float64)
            if arr.shape != v.value.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {v.value.shape}")
            v.value = arr.copy()
