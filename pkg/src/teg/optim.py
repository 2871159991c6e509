# src/teg/optim.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    """Adam moments and hyper-parameters. Moments mirror the parameter shapes."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decoupled: bool = False

    @classmethod
    def create(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> tuple[Sequence[Tensor], AdamState]:
    """Un paso de Adam con corrección de sesgo, in place. Weight decay acoplado salvo `state.decoupled`."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ContractError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moments"
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ContractError(f"adam_step: param {p.shape}, grad {np.shape(g)}, moment {m.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr, wd = state.learning_rate, state.weight_decay
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if wd and not state.decoupled:
            g = g + wd * p.data
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * (g * g)
        state.first_moment[i] = m
        state.second_moment[i] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if wd and state.decoupled:
            update = update + lr * wd * p.data
        p.data = p.data - update
    return params, state
