# src/teg/stream.py
"""Scoring en vivo: ventana de 32 segmentos por cámara, detección de rachas y presupuesto de latencia."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .granularity import GRANULARITY_NAMES, SEGMENTS, FeatureVolume
from .model import TeGConfig, TeGParams, predict

logger = logging.getLogger(__name__)

FeatureTriple = tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class StreamWindow:
    camera_id: str
    capacity: int = SEGMENTS
    features: Deque[FeatureTriple] = field(default_factory=deque)
    timestamps: Deque[int] = field(default_factory=deque)
    pushed: int = 0

    def __len__(self) -> int:
        return len(self.features)

    @property
    def first_index(self) -> int:
        """Stream index of the oldest buffered segment."""
        return self.pushed - len(self.features)

    def append(self, triple: FeatureTriple, timestamp_ms: int) -> None:
        if self.timestamps and timestamp_ms <= self.timestamps[-1]:
            raise ContractError(
                f"camera {self.camera_id}: timestamp {timestamp_ms} not after {self.timestamps[-1]}"
            )
        self.features.append(triple)
        self.timestamps.append(int(timestamp_ms))
        self.pushed += 1
        # ventana deslizante: sólo los últimos `capacity` segmentos
        while len(self.features) > self.capacity:
            self.features.popleft()
            self.timestamps.popleft()

    def volume(self) -> FeatureVolume:
        """Buffered rows, cyclically tiled up to `capacity` rows while the window is warming up."""
        n = len(self.features)
        if n == 0:
            raise ContractError(f"camera {self.camera_id}: empty window")
        rows = [self.features[i % n] for i in range(self.capacity)]
        return FeatureVolume(self.camera_id, *(np.stack([r[g] for r in rows]) for g in range(3)))


def _as_triple(triple: Sequence, dim: int) -> FeatureTriple:
    if len(triple) != len(GRANULARITY_NAMES):
        raise ContractError(f"expected one vector per granularity {GRANULARITY_NAMES}, got {len(triple)}")
    out = tuple(np.asarray(v, dtype=np.float64).ravel() for v in triple)
    for name, v in zip(GRANULARITY_NAMES, out):
        if v.shape != (dim,):
            raise ShapeError(f"{name} feature has width {v.size}, model expects {dim}")
        if not np.isfinite(v).all():
            raise ContractError(f"{name} feature has non-finite values")
    return out


def push_segment(
    window: StreamWindow,
    triple: Sequence,
    timestamp_ms: int,
    params: TeGParams,
    config: TeGConfig,
) -> np.ndarray:
    """Append one segment and re-score the whole window; returns scores for real rows, oldest first."""
    window.append(_as_triple(triple, config.dim), timestamp_ms)
    scores = predict(window.volume(), params, config)
    return scores[: len(window)]


@dataclass(frozen=True)
class Event:
    start: int
    end: int
    peak: float
    start_ms: int | None = None
    end_ms: int | None = None

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _check_detect_args(threshold: float, min_run: int) -> None:
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    if min_run < 1:
        raise ContractError(f"min_run must be >= 1, got {min_run}")


def detect(scores: Sequence[float], threshold: float, min_run: int = 1) -> list[Event]:
    """Maximal runs of scores >= threshold lasting at least `min_run` segments; end index inclusive."""
    _check_detect_args(threshold, min_run)
    det = StreamingDetector(threshold, min_run)
    events = [e for s in scores if (e := det.feed(float(s))) is not None]
    last = det.flush()
    if last is not None:
        events.append(last)
    return events


class StreamingDetector:
    """Incremental `detect`: feed one score at a time, events come out when their run closes."""

    def __init__(self, threshold: float, min_run: int = 1):
        _check_detect_args(threshold, min_run)
        self.threshold = threshold
        self.min_run = min_run
        self.index = 0
        self._start: int | None = None
        self._peak = 0.0
        self._start_ms: int | None = None
        self._last_ms: int | None = None

    @property
    def open(self) -> bool:
        return self._start is not None

    def _close(self) -> Event | None:
        event = None
        if self._start is not None and self.index - self._start >= self.min_run:
            event = Event(self._start, self.index - 1, self._peak, self._start_ms, self._last_ms)
        self._start = None
        self._start_ms = self._last_ms = None
        return event

    def feed(self, score: float, timestamp_ms: int | None = None) -> Event | None:
        event = None
        if score >= self.threshold:
            if self._start is None:
                self._start, self._peak, self._start_ms = self.index, score, timestamp_ms
            self._peak = max(self._peak, score)
            self._last_ms = timestamp_ms
        elif self._start is not None:
            event = self._close()
        self.index += 1
        return event

    def flush(self) -> Event | None:
        return self._close()


@dataclass(frozen=True)
class LatencyBudget:
    per_granularity_feature_ms: float
    granularity_count: int
    fusion_ms: float
    segment_ms: float
    total_ms: float
    fraction_of_segment: float

    def as_dict(self) -> dict:
        return {
            "per_granularity_feature_ms": self.per_granularity_feature_ms,
            "granularity_count": self.granularity_count,
            "fusion_ms": self.fusion_ms,
            "segment_ms": self.segment_ms,
            "total_ms": self.total_ms,
            "fraction_of_segment": self.fraction_of_segment,
        }


def latency_report(
    per_granularity_feature_ms: float,
    granularity_count: int,
    fusion_ms: float,
    segment_ms: float,
) -> LatencyBudget:
    """total = feature time x granularities + fusion; fraction is a percentage of the segment length."""
    if segment_ms <= 0:
        raise ContractError(f"segment_ms must be positive, got {segment_ms}")
    if per_granularity_feature_ms < 0 or fusion_ms < 0:
        raise ContractError("timings must be non-negative")
    if granularity_count < 1:
        raise ContractError(f"granularity_count must be >= 1, got {granularity_count}")
    total = per_granularity_feature_ms * granularity_count + fusion_ms
    return LatencyBudget(
        per_granularity_feature_ms, granularity_count, fusion_ms, segment_ms,
        total, 100.0 * total / segment_ms,
    )


@dataclass
class LatencyMeter:
    """Moving averages of measured feature-extraction and fusion times (ms)."""

    window: int = 50
    _feature: Deque[float] = field(default_factory=deque)
    _fusion: Deque[float] = field(default_factory=deque)

    @staticmethod
    def _record(q: Deque[float], value: float, window: int) -> None:
        q.append(float(value))
        if len(q) > window:
            q.popleft()

    def record_feature(self, ms: float) -> None:
        self._record(self._feature, ms, self.window)

    def record_fusion(self, ms: float) -> None:
        self._record(self._fusion, ms, self.window)

    @property
    def samples(self) -> int:
        return len(self._fusion)

    def report(self, segment_ms: float, granularity_count: int = len(GRANULARITY_NAMES)) -> LatencyBudget:
        feature = sum(self._feature) / len(self._feature) if self._feature else 0.0
        fusion = sum(self._fusion) / len(self._fusion) if self._fusion else 0.0
        return latency_report(feature, granularity_count, fusion, segment_ms)
