# src/teg/tensor.py
"""
Tensores float64 con autodiff en modo reverso. El orden de acumulación de
gradientes es fijo: dos ejecuciones dan resultados idénticos bit a bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

LOG_CLAMP = (1e-7, 1.0 - 1e-7)
NORM_EPS = 1e-5
SMOOTH_ABS_EPS = 1e-12

BackwardFn = Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        # constant subgraphs keep no history
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only supported by constants")
        return mul(self, 1.0 / float(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{name}: expected a 2-d tensor, got shape {t.shape}")


# ---------- elementwise ----------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    return Tensor._node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc
    return Tensor._node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    return Tensor._node(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return Tensor._node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log(a: Tensor, clamp: tuple[float, float] = LOG_CLAMP) -> Tensor:
    """Natural log of the argument clamped to `clamp`; zero gradient where clamped."""
    lo, hi = clamp
    x = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._node(np.log(x), (a,), lambda g: (g * inside / x,), "log")


def smooth_abs(a: Tensor, eps: float = SMOOTH_ABS_EPS) -> Tensor:
    """sqrt(x^2 + eps): |x| with a defined derivative at 0."""
    y = np.sqrt(a.data * a.data + eps)
    return Tensor._node(y, (a,), lambda g: (g * a.data / y,), "smooth_abs")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._node(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# ---------- reductions ----------

def tensor_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._node(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a: Tensor) -> Tensor:
    return tensor_sum(a) / a.data.size


def row_norms(a: Tensor) -> Tensor:
    """L2 norm of each row as an (M, 1) column."""
    _check_2d("row_norms", a)
    n = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    return Tensor._node(n, (a,), lambda g: (g * a.data / safe,), "row_norms")


# ---------- shape ops ----------

def transpose(a: Tensor) -> Tensor:
    _check_2d("transpose", a)
    return Tensor._node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor._node(a.data[idx], (a,), backward, "take_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        z = np.zeros_like(a.data)
        z[start:stop] = g
        return (z,)

    return Tensor._node(a.data[start:stop].copy(), (a,), backward, "slice_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _check_2d("slice_cols", a)

    def backward(g):
        z = np.zeros_like(a.data)
        z[:, start:stop] = g
        return (z,)

    return Tensor._node(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    _check_2d("concat_cols", *tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ: {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=1), tensors, backward, "concat_cols")


# ---------- matrix ops ----------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Tensor._node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def softmax_rows(a: Tensor) -> Tensor:
    _check_2d("softmax_rows", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return Tensor._node(y, (a,), backward, "softmax_rows")


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = NORM_EPS) -> Tensor:
    _check_2d("layer_norm_rows", a)
    n = a.shape[1]
    if n < 2:
        raise ContractError(f"layer_norm_rows needs at least 2 columns, got {n}")
    gain, bias = as_tensor(gain), as_tensor(bias)
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return Tensor._node(out, (a, gain, bias), backward, "layer_norm_rows")


# ---------- graph + backward ----------

@dataclass
class Graph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    nodes: list[Tensor]

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor], graph: Graph | None = None) -> list[np.ndarray]:
    """Gradiente de `loss` respecto a cada param; cero si no participa. Se guarda también en `.grad`."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    if graph is None:
        graph = Graph.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    out = []
    for p in params:
        g = grads.get(id(p))
        g = np.zeros_like(p.data) if g is None else g.reshape(p.shape)
        p.grad = g
        out.append(g)
    return out
