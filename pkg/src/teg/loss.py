# src/teg/loss.py
"""Objetivo de entrenamiento: hinge de magnitud top-k, BCE top-k, sparsity y smoothness."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .model import ForwardResult
from .tensor import Tensor, log, mean, relu, row_norms, slice_rows, smooth_abs, take_rows, tensor_sum


@dataclass(frozen=True)
class LossConfig:
    margin: float = 100.0
    k: int = 3
    lambda_fm: float = 1.0
    lambda1: float = 8e-4
    lambda2: float = 8e-4
    probability_clamp: float = 1e-7

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if not 1 <= self.k <= 32:
            raise ConfigError(f"k must be in [1, 32], got {self.k}")
        if min(self.lambda_fm, self.lambda1, self.lambda2) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 < self.probability_clamp < 0.5:
            raise ConfigError(f"probability_clamp must be in (0, 0.5), got {self.probability_clamp}")


@dataclass
class TopKSelection:
    indices: tuple[int, ...]
    mean_magnitude: Tensor


@dataclass
class LossBreakdown:
    total: float
    bce: float
    fm: float
    sparsity: float
    smoothness: float

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total, "bce": self.bce, "fm": self.fm,
                "sparsity": self.sparsity, "smoothness": self.smoothness}


def topk_magnitudes(x: Tensor, k: int) -> TopKSelection:
    """Mean of the k largest row L2 norms; ties go to the lower row index."""
    if x.data.ndim != 2:
        raise ShapeError(f"topk_magnitudes expects a matrix, got {x.shape}")
    if not 1 <= k <= x.shape[0]:
        raise ContractError(f"k={k} outside [1, {x.shape[0]}]")
    norms = row_norms(x)
    order = np.argsort(-norms.data[:, 0], kind="stable")[:k]
    idx = tuple(int(i) for i in order)
    return TopKSelection(idx, mean(take_rows(norms, idx)))


def feature_magnitude_loss(x_pos: Tensor, x_neg: Tensor, cfg: LossConfig) -> Tensor:
    if x_pos.shape != x_neg.shape:
        raise ShapeError(f"feature_magnitude_loss: abnormal {x_pos.shape} vs normal {x_neg.shape}")
    d = topk_magnitudes(x_pos, cfg.k).mean_magnitude - topk_magnitudes(x_neg, cfg.k).mean_magnitude
    return relu(cfg.margin - d)  # sube el top-k anómalo, baja el normal


def bce_topk_loss(scores: Tensor, x: Tensor, y: int, cfg: LossConfig) -> Tensor:
    """BCE sobre la media de scores de los k segmentos de mayor magnitud."""
    if y not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {y!r}")
    if scores.shape[0] != x.shape[0]:
        raise ShapeError(f"bce_topk_loss: {scores.shape[0]} scores for {x.shape[0]} feature rows")
    sel = topk_magnitudes(x, cfg.k)
    s_bar = mean(take_rows(scores, sel.indices))
    clamp = (cfg.probability_clamp, 1.0 - cfg.probability_clamp)
    if y == 1:
        return -log(s_bar, clamp)
    return -log(1.0 - s_bar, clamp)


def sparsity_smoothness(scores_pos: Tensor) -> tuple[Tensor, Tensor]:
    """sum(s_t^2) and sum |s_t - s_{t-1}| (smooth |.|) over abnormal-video scores."""
    sparsity = tensor_sum(scores_pos * scores_pos)
    n = scores_pos.shape[0]
    if n < 2:
        return sparsity, Tensor(0.0)
    diffs = slice_rows(scores_pos, 1, n) - slice_rows(scores_pos, 0, n - 1)
    return sparsity, tensor_sum(smooth_abs(diffs))


def weighted_sum(bce, fm, sparsity, smoothness, cfg: LossConfig):
    """Works on floats and Tensors alike."""
    return bce + cfg.lambda_fm * fm + cfg.lambda1 * sparsity + cfg.lambda2 * smoothness


def total_loss(
    abnormal: Sequence[ForwardResult],
    normal: Sequence[ForwardResult],
    cfg: LossConfig,
) -> tuple[Tensor, LossBreakdown]:
    """Mean over positionally paired (abnormal, normal) videos of the weighted objective."""
    if len(abnormal) != len(normal) or not abnormal:
        raise ContractError(f"batch halves must be equal and non-empty, got {len(abnormal)} abnormal / {len(normal)} normal")
    n = len(abnormal)
    bce_terms, fm_terms, sp_terms, sm_terms = [], [], [], []
    for pos, neg in zip(abnormal, normal):
        bce_terms.append(bce_topk_loss(pos.scores, pos.features, 1, cfg) + bce_topk_loss(neg.scores, neg.features, 0, cfg))
        fm_terms.append(feature_magnitude_loss(pos.features, neg.features, cfg))
        sp, sm = sparsity_smoothness(pos.scores)
        sp_terms.append(sp)
        sm_terms.append(sm)

    def batch_mean(terms: list[Tensor]) -> Tensor:
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc / n

    bce, fm, sp, sm = (batch_mean(t) for t in (bce_terms, fm_terms, sp_terms, sm_terms))
    total = weighted_sum(bce, fm, sp, sm, cfg)
    return total, LossBreakdown(total.item(), bce.item(), fm.item(), sp.item(), sm.item())
