# src/teg/granularity.py
"""Segmentos (32), chunks de G frames por granularidad y volúmenes de features."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, ProviderError, ShapeError

logger = logging.getLogger(__name__)

SEGMENTS = 32
DEFAULT_GRANULARITIES: tuple[int, int, int] = (8, 32, 64)
GRANULARITY_NAMES = ("short", "medium", "long")

FrameRange = tuple[int, int]


@dataclass(frozen=True)
class GranularitySpec:
    segment_length: int
    granularity: int
    chunk_ranges: tuple[FrameRange, ...]

    @property
    def chunk_count(self) -> int:
        return len(self.chunk_ranges)


def plan_chunks(segment_length: int, granularity: int) -> GranularitySpec:
    """Rangos [a, b) que cubren [0, L); el resto va al último chunk y G > L da uno solo."""
    if segment_length < 1 or granularity < 1:
        raise ContractError(f"plan_chunks needs L >= 1 and G >= 1, got L={segment_length}, G={granularity}")
    count = max(1, segment_length // granularity)
    ranges = [(j * granularity, (j + 1) * granularity) for j in range(count)]
    ranges[-1] = (ranges[-1][0], segment_length)
    return GranularitySpec(segment_length, granularity, tuple(ranges))


def aggregate_segment(chunk_features: Sequence[np.ndarray]) -> np.ndarray:
    if len(chunk_features) == 0:
        raise ContractError("aggregate_segment needs at least one chunk feature")
    stacked = np.stack([np.asarray(f, dtype=np.float64) for f in chunk_features])
    if stacked.ndim != 2:
        raise ShapeError(f"aggregate_segment: chunk features must be vectors, got {stacked.shape}")
    return stacked.mean(axis=0)


def segment_bounds(total_frames: int, segments: int = SEGMENTS) -> list[FrameRange]:
    """Floor-interpolated partition: segment i covers [floor(i*N/S), floor((i+1)*N/S))."""
    if total_frames < segments:
        raise ContractError(f"need at least {segments} frames, got {total_frames}")
    return [((i * total_frames) // segments, ((i + 1) * total_frames) // segments) for i in range(segments)]


class ChunkFeatureProvider:
    """Sustituto del backbone: (vídeo, rango de frames, G) -> feature de D dims."""

    dim: int
    thread_safe: bool = True  # False si no admite llamadas concurrentes

    def features(self, video_id: str, frame_range: FrameRange, granularity: int) -> np.ndarray:
        raise NotImplementedError


class ConstantChunkProvider(ChunkFeatureProvider):
    def __init__(self, vector: Sequence[float]):
        self.vector = np.asarray(vector, dtype=np.float64)
        self.dim = self.vector.shape[0]

    def features(self, video_id, frame_range, granularity):
        return self.vector.copy()


@dataclass
class FeatureVolume:
    """Per-video triple of (segments x D) matrices, one per temporal granularity."""

    video_id: str
    short: np.ndarray
    medium: np.ndarray
    long: np.ndarray
    granularities: tuple[int, int, int] = DEFAULT_GRANULARITIES

    def __post_init__(self):
        self.short = np.asarray(self.short, dtype=np.float64)
        self.medium = np.asarray(self.medium, dtype=np.float64)
        self.long = np.asarray(self.long, dtype=np.float64)
        shapes = {m.shape for m in self.matrices}
        if len(shapes) != 1 or self.short.ndim != 2:
            raise ShapeError(f"volume {self.video_id}: matrices must share a 2-d shape, got {[m.shape for m in self.matrices]}")
        if not all(np.isfinite(m).all() for m in self.matrices):
            raise ContractError(f"volume {self.video_id}: non-finite feature values")

    @property
    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.short, self.medium, self.long

    @property
    def segments(self) -> int:
        return self.short.shape[0]

    @property
    def dim(self) -> int:
        return self.short.shape[1]

    def restrict_to(self, granularity: str) -> "FeatureVolume":
        """Same volume with every slot replaced by one granularity (ablation input)."""
        if granularity not in GRANULARITY_NAMES:
            raise ContractError(f"unknown granularity {granularity!r}; expected one of {GRANULARITY_NAMES}")
        m = getattr(self, granularity)
        g = self.granularities[GRANULARITY_NAMES.index(granularity)]
        return FeatureVolume(self.video_id, m, m, m, (g, g, g))


def build_feature_volume(
    provider: ChunkFeatureProvider,
    video_id: str,
    total_frames: int,
    granularities: tuple[int, int, int] = DEFAULT_GRANULARITIES,
    workers: int = 1,
) -> FeatureVolume:
    """Run the provider over every chunk of every segment and average per segment."""
    if len(granularities) != 3:
        raise ContractError(f"exactly three granularities are required, got {granularities}")
    bounds = segment_bounds(total_frames)
    cache: dict[tuple[FrameRange, int], np.ndarray] = {}

    def chunk_feature(frame_range: FrameRange, g: int, segment: int) -> np.ndarray:
        key = (frame_range, g)
        if key not in cache:
            try:
                vec = np.asarray(provider.features(video_id, frame_range, g), dtype=np.float64)
            except Exception as exc:
                raise ProviderError(
                    f"provider failed for video={video_id} segment={segment} granularity={g} frames={frame_range}"
                ) from exc
            if vec.shape != (provider.dim,) or not np.isfinite(vec).all():
                raise ProviderError(
                    f"provider returned invalid feature for video={video_id} segment={segment} "
                    f"granularity={g}: shape {vec.shape}, expected ({provider.dim},)"
                )
            cache[key] = vec
        return cache[key]

    def segment_rows(i: int) -> list[np.ndarray]:
        start, end = bounds[i]
        rows = []
        for g in granularities:
            plan = plan_chunks(end - start, g)
            feats = [chunk_feature((start + a, start + b), g, i) for a, b in plan.chunk_ranges]
            rows.append(aggregate_segment(feats))
        return rows

    if workers > 1 and provider.thread_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_segment = list(pool.map(segment_rows, range(len(bounds))))
    else:
        per_segment = [segment_rows(i) for i in range(len(bounds))]

    mats = [np.stack([rows[k] for rows in per_segment]) for k in range(3)]
    logger.debug("built volume video=%s frames=%d dim=%d", video_id, total_frames, provider.dim)
    return FeatureVolume(video_id, mats[0], mats[1], mats[2], tuple(granularities))
