# src/teg/metrics.py
"""AUC/AP por frame, expansión segmento -> frame, accuracy/F1 por vídeo e informe de evaluación."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import NORMAL_CLASS, SEEN_CLASSES, Dataset
from .errors import ContractError, UndefinedMetricError
from .granularity import segment_bounds
from .model import TeGConfig, TeGParams, predict

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
F1_CONVENTION = (
    "video-level: abnormal iff max segment score >= threshold; F1 = 2TP/(2TP+FP+FN). "
    "Anomaly-only groups have FP=0, so precision is 1 there."
)


@dataclass
class FrameScoreTrace:
    video_id: str
    segment_scores: np.ndarray
    frame_scores: np.ndarray
    frame_truth: np.ndarray | None = None

    def __post_init__(self):
        if self.frame_truth is not None and len(self.frame_truth) != len(self.frame_scores):
            raise ContractError(f"{self.video_id}: {len(self.frame_scores)} scores vs {len(self.frame_truth)} truths")

    def to_json(self) -> dict:
        row = {
            "video_id": self.video_id,
            "segment_scores": [float(s) for s in self.segment_scores],
            "max_score": float(np.max(self.segment_scores)),
            "frame_scores": [float(s) for s in self.frame_scores],
        }
        if self.frame_truth is not None:
            row["frame_truth"] = [int(t) for t in self.frame_truth]
        return row


@dataclass
class BinaryOutcome:
    predicted_normal: int
    predicted_abnormal: int
    accuracy: float
    f1: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def expand_scores_to_frames(scores: Sequence[float], num_frames: int) -> np.ndarray:
    """Segment i's score covers frames [floor(i*N/S), floor((i+1)*N/S))."""
    scores = np.asarray(scores, dtype=np.float64)
    if num_frames < len(scores):
        raise ContractError(f"need at least {len(scores)} frames, got {num_frames}")
    out = np.empty(num_frames)
    for s, (a, b) in zip(scores, segment_bounds(num_frames, len(scores))):
        out[a:b] = s
    return out


def _binary_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0/1")
    return scores, labels.astype(bool)


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties count one half (Mann-Whitney U)."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"ROC-AUC needs both classes, got {n_pos} positive / {n_neg} negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Mean of precision@rank over the ranks of the positives (descending score, stable order)."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision_at = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision_at[hits].sum() / n_pos)


def binary_confusion_metrics(max_scores, threshold: float, truths) -> BinaryOutcome:
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    max_scores = np.asarray(max_scores, dtype=np.float64).ravel()
    truths = np.asarray(truths).astype(bool).ravel()
    if max_scores.size == 0:
        raise ContractError("binary_confusion_metrics needs at least one video")
    if max_scores.shape != truths.shape:
        raise ContractError(f"{max_scores.size} scores vs {truths.size} truths")
    pred = max_scores >= threshold
    tp = int((pred & truths).sum())
    fp = int((pred & ~truths).sum())
    tn = int((~pred & ~truths).sum())
    fn = int((~pred & truths).sum())
    denom = 2 * tp + fp + fn
    return BinaryOutcome(
        predicted_normal=tn + fn,
        predicted_abnormal=tp + fp,
        accuracy=(tp + tn) / max_scores.size,
        f1=(2 * tp / denom) if denom else 1.0,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def score_dataset(dataset: Dataset, params: TeGParams, config: TeGConfig) -> list[FrameScoreTrace]:
    traces = []
    for rec in dataset.records:
        label = dataset.label(rec)
        seg = predict(rec.volume, params, config)
        traces.append(FrameScoreTrace(rec.video_id, seg, expand_scores_to_frames(seg, label.frames), label.frame_truth))
    return traces


def _pooled_frames(traces: Sequence[FrameScoreTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Frame scores and truths of every trace that has truth; videos without truth are skipped."""
    with_truth = [t for t in traces if t.frame_truth is not None]  # sin anotación no cuentan
    if not with_truth:
        return np.empty(0), np.empty(0, dtype=np.uint8)
    return (np.concatenate([t.frame_scores for t in with_truth]),
            np.concatenate([t.frame_truth for t in with_truth]))


def frame_level_auc(traces: Sequence[FrameScoreTrace]) -> float:
    scores, truth = _pooled_frames(traces)
    if truth.size == 0:
        raise UndefinedMetricError(f"frame-level AUC needs frame truth; none of {len(traces)} videos has any")
    return roc_auc(scores, truth)


def evaluate(
    dataset: Dataset,
    params: TeGParams,
    config: TeGConfig,
    threshold: float = DEFAULT_THRESHOLD,
    seen_classes: Sequence[str] = SEEN_CLASSES,
    traces: list[FrameScoreTrace] | None = None,
) -> dict:
    """Evaluation report: frame AUC/AP, video-level confusion, per-class and seen/unseen/all rows."""
    if traces is None:
        traces = score_dataset(dataset, params, config)
    scores, truth = _pooled_frames(traces)
    report: dict = {"threshold": threshold, "videos": len(traces), "f1_convention": F1_CONVENTION}
    report["auc"] = roc_auc(scores, truth) if truth.size else None
    report["ap"] = average_precision(scores, truth) if truth.any() else None

    labels = [dataset.labels[t.video_id] for t in traces]
    max_scores = np.array([float(np.max(t.segment_scores)) for t in traces])
    ys = np.array([lab.y for lab in labels])
    report["confusion"] = binary_confusion_metrics(max_scores, threshold, ys).as_dict()

    per_class = {}
    for cls in sorted({lab.anomaly_class for lab in labels}):
        mask = np.array([lab.anomaly_class == cls for lab in labels])
        per_class[cls] = binary_confusion_metrics(max_scores[mask], threshold, ys[mask]).as_dict()
    report["per_class"] = per_class

    groups = {
        "seen": [lab.y == 1 and lab.anomaly_class in seen_classes for lab in labels],
        "unseen": [lab.y == 1 and lab.anomaly_class not in seen_classes and lab.anomaly_class != NORMAL_CLASS for lab in labels],
        "all_anomalies": [lab.y == 1 for lab in labels],
    }
    breakdown = {}
    for name, mask in groups.items():
        mask = np.array(mask, dtype=bool)
        if mask.any():
            breakdown[name] = binary_confusion_metrics(max_scores[mask], threshold, ys[mask]).as_dict()
    report["breakdown"] = breakdown
    logger.info("evaluation videos=%d auc=%s ap=%s accuracy=%.4f",
                len(traces), report["auc"], report["ap"], report["confusion"]["accuracy"])
    return report
