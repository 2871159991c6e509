# src/teg/data.py
"""
Feature persistence (TEGF), label manifests, the synthetic dataset that
stands in for real surveillance footage, and the 64+64 batch sampler.

TEGF layout (little-endian):
    "TEGF" | u32 version=1 | u32 D | u32 segments=32 | u8 granularity count=3 |
    per granularity: u32 G, segments*D float32 row-major
"""
from __future__ import annotations

import enum
import json
import logging
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import ByteReader
from .errors import ConfigError, ContractError, FormatError
from .granularity import (
    DEFAULT_GRANULARITIES,
    SEGMENTS,
    ChunkFeatureProvider,
    FeatureVolume,
    FrameRange,
    build_feature_volume,
)
from .utils import read_jsonl, write_json, write_jsonl

logger = logging.getLogger(__name__)

TEGF_MAGIC = b"TEGF"
TEGF_VERSION = 1
LABELS_FILE = "labels.jsonl"
META_FILE = "dataset.json"
FEATURES_DIR = "features"

# class -> duration scale; the scale decides which granularity sees it best
ANOMALY_CLASSES: dict[str, str] = {
    "littering": "short",
    "dangerous_throwing": "short",
    "unlawful_stop": "medium",
    "improper_turn": "medium",
    "fighting": "long",
    "improper_zone": "long",
}
SEEN_CLASSES = ("littering", "fighting", "dangerous_throwing")
NORMAL_CLASS = "normal"

# scale -> (min frames, max frames, tempo in frames)
DURATION_SCALES: dict[str, tuple[int, int, int]] = {
    "short": (8, 24, 8),
    "medium": (32, 96, 32),
    "long": (160, 512, 64),
}
PROFILES = ("short", "medium", "long", "mixed")


class FeatureSource(str, enum.Enum):
    SYNTHETIC = "synthetic"
    IMPORTED = "imported"


@dataclass
class FeatureRecord:
    volume: FeatureVolume
    source: FeatureSource = FeatureSource.IMPORTED

    @property
    def video_id(self) -> str:
        return self.volume.video_id

    @property
    def dim(self) -> int:
        return self.volume.dim


@dataclass
class VideoLabel:
    video_id: str
    y: int
    anomaly_class: str
    frames: int
    frame_truth: np.ndarray | None = None

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ContractError(f"label y must be 0 or 1, got {self.y!r} for {self.video_id}")
        if self.frame_truth is not None:
            self.frame_truth = np.asarray(self.frame_truth, dtype=np.uint8)
            if self.frame_truth.shape != (self.frames,):
                raise ContractError(
                    f"{self.video_id}: frame_truth has {self.frame_truth.size} entries for {self.frames} frames"
                )

    def to_json(self) -> dict:
        row = {"video_id": self.video_id, "y": self.y, "anomaly_class": self.anomaly_class, "frames": self.frames}
        if self.frame_truth is not None:
            row["frame_truth"] = self.frame_truth.astype(int).tolist()
        return row

    @classmethod
    def from_json(cls, row: dict) -> "VideoLabel":
        return cls(row["video_id"], int(row["y"]), row["anomaly_class"], int(row["frames"]), row.get("frame_truth"))


# ---------- TEGF ----------

def encode_feature_record(record: FeatureRecord) -> bytes:
    vol = record.volume
    if vol.segments != SEGMENTS:
        raise ContractError(f"TEGF {vol.video_id}: volumes carry {SEGMENTS} segments, got {vol.segments}")
    out = bytearray(TEGF_MAGIC)
    out += struct.pack("<IIIB", TEGF_VERSION, vol.dim, vol.segments, 3)
    for g, m in zip(vol.granularities, vol.matrices):
        out += struct.pack("<I", g)
        out += np.ascontiguousarray(m, dtype="<f4").tobytes()
    return bytes(out)


def decode_feature_record(data: bytes, video_id: str, source: FeatureSource = FeatureSource.IMPORTED) -> FeatureRecord:
    r = ByteReader(data, f"TEGF {video_id}")
    r.expect_magic(TEGF_MAGIC)
    r.expect_version(TEGF_VERSION)
    dim, segments, count = r.unpack("IIB")
    if segments != SEGMENTS:
        raise FormatError(f"TEGF {video_id}: expected {SEGMENTS} segments, header says {segments}")
    if count != 3:
        raise FormatError(f"TEGF {video_id}: expected 3 granularities, header says {count}")
    gs, mats = [], []
    for _ in range(count):
        gs.append(r.u32())
        mats.append(r.array(segments * dim, "<f4").astype(np.float64).reshape(segments, dim))
    if r.remaining():
        raise FormatError(f"TEGF {video_id}: {r.remaining()} trailing bytes")
    return FeatureRecord(FeatureVolume(video_id, *mats, granularities=tuple(gs)), source)


def write_feature_file(record: FeatureRecord, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_feature_record(record))
    return path


def read_feature_file(path: str | os.PathLike, source: FeatureSource = FeatureSource.IMPORTED) -> FeatureRecord:
    """The video id is the file stem; the format itself carries only numbers."""
    path = Path(path)
    return decode_feature_record(path.read_bytes(), path.stem, source)


# ---------- datasets ----------

@dataclass
class Dataset:
    records: list[FeatureRecord]
    labels: dict[str, VideoLabel]

    def __post_init__(self):
        missing = [r.video_id for r in self.records if r.video_id not in self.labels]
        if missing:
            raise ContractError(f"records without labels: {missing[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def label(self, record: FeatureRecord) -> VideoLabel:
        return self.labels[record.video_id]

    def normals(self) -> list[FeatureRecord]:
        return [r for r in self.records if self.labels[r.video_id].y == 0]

    def abnormals(self) -> list[FeatureRecord]:
        return [r for r in self.records if self.labels[r.video_id].y == 1]

    @property
    def dim(self) -> int:
        return self.records[0].dim

    def restrict_to(self, granularity: str) -> "Dataset":
        """Ablation view: every volume fed from a single granularity."""
        return Dataset([FeatureRecord(r.volume.restrict_to(granularity), r.source) for r in self.records], self.labels)

    def save(self, directory: str | os.PathLike, meta: dict | None = None) -> Path:
        directory = Path(directory)
        for rec in self.records:
            write_feature_file(rec, directory / FEATURES_DIR / f"{rec.video_id}.tegf")
        write_jsonl(directory / LABELS_FILE, (self.labels[r.video_id].to_json() for r in self.records))
        source = self.records[0].source.value if self.records else FeatureSource.IMPORTED.value
        write_json(directory / META_FILE, {"source": source, "videos": len(self.records), **(meta or {})})
        logger.info("dataset saved dir=%s videos=%d", directory, len(self.records))
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "Dataset":
        directory = Path(directory)
        labels_path = directory / LABELS_FILE
        if not labels_path.is_file():
            raise FileNotFoundError(f"no label manifest at {labels_path}")
        source = FeatureSource.IMPORTED
        if (directory / META_FILE).is_file():
            source = FeatureSource(json.loads((directory / META_FILE).read_text())["source"])
        labels: dict[str, VideoLabel] = {}
        records = []
        for row in read_jsonl(labels_path):
            label = VideoLabel.from_json(row)
            labels[label.video_id] = label
            records.append(read_feature_file(directory / FEATURES_DIR / f"{label.video_id}.tegf", source))
        logger.info("dataset loaded dir=%s videos=%d", directory, len(records))
        return cls(records, labels)


# ---------- synthetic data ----------

@dataclass(frozen=True)
class SyntheticConfig:
    normal_videos: int = 100
    abnormal_videos: int = 100
    dim: int = 16
    frames: int = 2048
    duration_profile: str = "mixed"
    signal_scale: float = 3.0
    noise: float = 1.0
    seed: int = 0
    classes: tuple[str, ...] = tuple(ANOMALY_CLASSES)
    granularities: tuple[int, int, int] = DEFAULT_GRANULARITIES
    prefix: str = "video"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "granularities", tuple(self.granularities))
        self.validate()

    def validate(self) -> None:
        if self.normal_videos < 1 or self.abnormal_videos < 1:
            raise ConfigError("synthetic datasets need at least one video per class")
        if self.dim < 1 or self.frames < 32:
            raise ConfigError(f"need dim >= 1 and frames >= 32, got dim={self.dim} frames={self.frames}")
        if self.signal_scale <= 0 or self.noise < 0:
            raise ConfigError("signal_scale must be positive and noise non-negative")
        if self.duration_profile not in PROFILES:
            raise ConfigError(f"duration_profile must be one of {PROFILES}, got {self.duration_profile!r}")
        unknown = [c for c in self.classes if c not in ANOMALY_CLASSES]
        if unknown or not self.classes:
            raise ConfigError(f"unknown anomaly classes {unknown}; known: {list(ANOMALY_CLASSES)}")
        if not self.eligible_classes():
            raise ConfigError(f"no class in {self.classes} has duration scale {self.duration_profile!r}")

    def eligible_classes(self) -> tuple[str, ...]:
        if self.duration_profile == "mixed":
            return self.classes
        return tuple(c for c in self.classes if ANOMALY_CLASSES[c] == self.duration_profile)


@dataclass(frozen=True)
class PlantedAnomaly:
    start: int
    end: int
    tempo: int
    signature: np.ndarray = field(compare=False)

    def response(self, frame_range: FrameRange, granularity: int) -> float:
        """Backbone response strength: overlap fraction squared, damped when chunks are shorter than the tempo."""
        a, b = frame_range
        overlap = max(0, min(b, self.end) - max(a, self.start))
        if overlap == 0:
            return 0.0
        return (overlap / (b - a)) ** 2 * min(1.0, granularity / self.tempo)


def class_signature(anomaly_class: str, dim: int, scale: float, seed: int) -> np.ndarray:
    """Fixed per-class shift direction with norm scale*sqrt(dim)."""
    rng = np.random.default_rng([seed, 0x5EED, list(ANOMALY_CLASSES).index(anomaly_class)])
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v) * scale * np.sqrt(dim)


class SyntheticChunkProvider(ChunkFeatureProvider):
    """Gaussian chunk features plus planted class signatures; pure function of its arguments."""

    def __init__(self, dim: int, seed: int, noise: float = 1.0, anomalies: Sequence[PlantedAnomaly] = ()):
        self.dim = dim
        self.seed = seed
        self.noise = noise
        self.anomalies = tuple(anomalies)

    def expected(self, frame_range: FrameRange, granularity: int) -> np.ndarray:
        vec = np.zeros(self.dim)
        for a in self.anomalies:
            w = a.response(frame_range, granularity)
            if w:
                vec = vec + w * a.signature
        return vec

    def features(self, video_id, frame_range, granularity):
        vec = self.expected(frame_range, granularity)
        if self.noise:
            key = [self.seed, zlib.crc32(video_id.encode("utf-8")), frame_range[0], frame_range[1], granularity]
            vec = vec + np.random.default_rng(key).normal(0.0, self.noise, self.dim)
        return vec


class SyntheticGenerator:
    """Draws videos one by one from a single seeded stream, normals first."""

    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.signatures = {c: class_signature(c, cfg.dim, cfg.signal_scale, cfg.seed) for c in ANOMALY_CLASSES}
        self.planted: dict[str, list[PlantedAnomaly]] = {}

    def _plant(self, anomaly_class: str) -> PlantedAnomaly:
        lo, hi, tempo = DURATION_SCALES[ANOMALY_CLASSES[anomaly_class]]
        hi = min(hi, self.cfg.frames)
        duration = int(self.rng.integers(min(lo, hi), hi + 1))
        start = int(self.rng.integers(0, self.cfg.frames - duration + 1))
        return PlantedAnomaly(start, start + duration, tempo, self.signatures[anomaly_class])

    def _video(self, video_id: str, anomaly_class: str | None) -> tuple[FeatureRecord, VideoLabel]:
        cfg = self.cfg
        planted = [self._plant(anomaly_class)] if anomaly_class else []
        self.planted[video_id] = planted
        provider = SyntheticChunkProvider(cfg.dim, cfg.seed, cfg.noise, planted)
        volume = build_feature_volume(provider, video_id, cfg.frames, cfg.granularities)
        # snap to float32 so in-memory and on-disk datasets train identically
        volume = FeatureVolume(video_id, *(m.astype(np.float32) for m in volume.matrices), granularities=volume.granularities)
        truth = np.zeros(cfg.frames, dtype=np.uint8)
        for a in planted:
            truth[a.start:a.end] = 1
        label = VideoLabel(video_id, int(bool(anomaly_class)), anomaly_class or NORMAL_CLASS, cfg.frames, truth)
        return FeatureRecord(volume, FeatureSource.SYNTHETIC), label

    def produce(self) -> Dataset:
        cfg = self.cfg
        records, labels = [], {}
        eligible = cfg.eligible_classes()
        for i in range(cfg.normal_videos):
            rec, lab = self._video(f"{cfg.prefix}_normal_{i:04d}", None)
            records.append(rec)
            labels[lab.video_id] = lab
        for i in range(cfg.abnormal_videos):
            cls = eligible[int(self.rng.integers(len(eligible)))]
            rec, lab = self._video(f"{cfg.prefix}_abnormal_{i:04d}", cls)
            records.append(rec)
            labels[lab.video_id] = lab
        logger.info("synthetic dataset generated normal=%d abnormal=%d dim=%d profile=%s seed=%d",
                    cfg.normal_videos, cfg.abnormal_videos, cfg.dim, cfg.duration_profile, cfg.seed)
        return Dataset(records, labels)


def generate_synthetic_dataset(cfg: SyntheticConfig) -> Dataset:
    return SyntheticGenerator(cfg).produce()


def synthetic_meta(cfg: SyntheticConfig) -> dict:
    meta = asdict(cfg)
    meta["classes"] = list(cfg.classes)
    meta["granularities"] = list(cfg.granularities)
    return {"synthetic": meta}


# ---------- batches ----------

@dataclass
class Batch:
    abnormal: list[FeatureRecord]
    normal: list[FeatureRecord]

    def __len__(self) -> int:
        return len(self.abnormal) + len(self.normal)


def _draw(pool: list[FeatureRecord], n: int, rng: np.random.Generator) -> list[FeatureRecord]:
    idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
    return [pool[int(i)] for i in idx]


def sample_batch(dataset: Dataset, rng: np.random.Generator, per_class: int = 64) -> Batch:
    """`per_class` abnormal and `per_class` normal videos; with replacement when a class is smaller."""
    normals, abnormals = dataset.normals(), dataset.abnormals()
    if not normals or not abnormals:
        raise ContractError(f"batch needs both classes, have {len(normals)} normal / {len(abnormals)} abnormal")
    abnormal = _draw(abnormals, per_class, rng)
    normal = _draw(normals, per_class, rng)
    return Batch(abnormal, normal)


