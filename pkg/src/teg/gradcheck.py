# src/teg/gradcheck.py
"""Central finite-difference oracle for checking analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: int
    worst_index: tuple[int, ...]
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param.data)
    for idx in np.ndindex(param.shape):
        orig = param.data[idx]
        param.data[idx] = orig + step
        up = fn().item()
        param.data[idx] = orig - step
        down = fn().item()
        param.data[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    abs_floor: float = 1e-3,
) -> GradCheckResult:
    """Compara backward() con diferencias centrales, elemento a elemento."""
    analytic = [g.copy() for g in backward(fn(), params)]  # copia: fn() vuelve a escribir .grad
    worst = GradCheckResult(0.0, -1, (), 0)
    for pi, (p, a) in enumerate(zip(params, analytic)):
        n = numerical_gradient(fn, p, step)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
        rel = np.abs(a - n) / denom
        worst.checked += rel.size
        if rel.size and rel.max() > worst.max_rel_error:
            worst.max_rel_error = float(rel.max())
            worst.worst_param = pi
            worst.worst_index = tuple(int(i) for i in np.unravel_index(int(rel.argmax()), rel.shape))
    return worst
