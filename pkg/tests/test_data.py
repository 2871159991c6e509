import json
import struct

import numpy as np
import pytest

from teg.data import (
    ANOMALY_CLASSES,
    LABELS_FILE,
    META_FILE,
    TEGF_MAGIC,
    Dataset,
    FeatureRecord,
    FeatureSource,
    PlantedAnomaly,
    SyntheticChunkProvider,
    SyntheticConfig,
    SyntheticGenerator,
    VideoLabel,
    class_signature,
    decode_feature_record,
    encode_feature_record,
    generate_synthetic_dataset,
    read_feature_file,
    sample_batch,
    write_feature_file,
)
from teg.errors import (
    BadMagicError,
    ConfigError,
    ContractError,
    FormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from teg.granularity import FeatureVolume, build_feature_volume
from teg.metrics import roc_auc


def _f32_volume(rng, video_id="clip", dim=4):
    return FeatureVolume(video_id, *(rng.normal(size=(32, dim)).astype(np.float32) for _ in range(3)))


class TestTEGF:
    def test_round_trip(self, rng, tmp_path):
        rec = FeatureRecord(_f32_volume(rng))
        back = read_feature_file(write_feature_file(rec, tmp_path / "clip.tegf"))
        assert back.video_id == "clip"
        for a, b in zip(rec.volume.matrices, back.volume.matrices):
            np.testing.assert_array_equal(a, b)
        assert back.volume.granularities == (8, 32, 64)

    def test_golden_bytes(self):
        dim = 4
        mats = [np.arange(32 * dim, dtype=np.float32).reshape(32, dim) * (g + 1) for g in range(3)]
        blob = TEGF_MAGIC + struct.pack("<IIIB", 1, dim, 32, 3)
        for g, m in zip((8, 32, 64), mats):
            blob += struct.pack("<I", g) + m.astype("<f4").tobytes()
        rec = decode_feature_record(blob, "golden")
        for a, b in zip(rec.volume.matrices, mats):
            np.testing.assert_array_equal(a, b)
        assert encode_feature_record(rec) == blob
        assert len(blob) == 4 + 13 + 3 * (4 + 32 * dim * 4)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            decode_feature_record(b"XXXX" + bytes(64), "v")

    def test_version_and_truncation(self, rng):
        blob = encode_feature_record(FeatureRecord(_f32_volume(rng)))
        with pytest.raises(VersionMismatchError):
            decode_feature_record(blob[:4] + struct.pack("<I", 2) + blob[8:], "v")
        with pytest.raises(TruncatedPayloadError):
            decode_feature_record(blob[:-1], "v")

    def test_segment_count_enforced(self, rng):
        blob = encode_feature_record(FeatureRecord(_f32_volume(rng)))
        with pytest.raises(FormatError, match="segments"):
            decode_feature_record(blob[:12] + struct.pack("<I", 31) + blob[16:], "v")
        four = FeatureVolume("v", *(rng.normal(size=(4, 4)) for _ in range(3)))
        with pytest.raises(ContractError):
            encode_feature_record(FeatureRecord(four))

    def test_random_records_round_trip(self, rng, tmp_path):
        for i in range(50):
            dim = int(rng.integers(1, 13))
            gs = tuple(int(g) for g in np.sort(rng.choice(np.arange(1, 257), size=3, replace=False)))
            scale = 10.0 ** int(rng.integers(-6, 7))
            mats = [(rng.normal(size=(32, dim)) * scale).astype(np.float32) for _ in range(3)]
            rec = FeatureRecord(FeatureVolume(f"clip-{i}", *mats, granularities=gs))
            back = read_feature_file(write_feature_file(rec, tmp_path / f"clip-{i}.tegf"))
            assert back.video_id == f"clip-{i}" and back.volume.granularities == gs
            for a, b in zip(mats, back.volume.matrices):
                np.testing.assert_array_equal(a, b)
            assert encode_feature_record(back) == encode_feature_record(rec)


class TestLabels:
    def test_json_round_trip(self):
        lab = VideoLabel("v", 1, "fighting", 4, [0, 1, 1, 0])
        back = VideoLabel.from_json(json.loads(json.dumps(lab.to_json())))
        assert back.video_id == "v" and back.y == 1
        np.testing.assert_array_equal(back.frame_truth, [0, 1, 1, 0])

    def test_truth_length_checked(self):
        with pytest.raises(ContractError):
            VideoLabel("v", 1, "fighting", 5, [0, 1])
        with pytest.raises(ContractError):
            VideoLabel("v", 2, "fighting", 2)


class TestSynthetic:
    def test_counts(self):
        ds = generate_synthetic_dataset(SyntheticConfig(normal_videos=10, abnormal_videos=10, dim=4, frames=128))
        assert len(ds) == 20
        assert sum(lab.y for lab in ds.labels.values()) == 10
        assert all(lab.frame_truth is not None for lab in ds.labels.values())
        for rec in ds.abnormals():
            lab = ds.label(rec)
            assert lab.anomaly_class in ANOMALY_CLASSES and lab.frame_truth.sum() > 0
        for rec in ds.normals():
            assert ds.label(rec).frame_truth.sum() == 0

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SyntheticConfig(normal_videos=3, abnormal_videos=3, dim=4, frames=256, seed=5)
        a = generate_synthetic_dataset(cfg).save(tmp_path / "a")
        b = generate_synthetic_dataset(cfg).save(tmp_path / "b")
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_planted_short_anomaly_visible_only_at_short_granularity(self):
        sig = class_signature("littering", 6, 3.0, seed=0)
        provider = SyntheticChunkProvider(6, seed=0, noise=0.0, anomalies=[PlantedAnomaly(128, 136, 8, sig)])
        vol = build_feature_volume(provider, "v", 2048)
        short_norms = np.linalg.norm(vol.short, axis=1)
        assert np.count_nonzero(short_norms) == 1 and short_norms[2] > 0
        long_row = vol.long[2]
        assert np.linalg.norm(long_row) <= 8 / 64 * np.linalg.norm(sig) + 1e-12

    def test_profile_filters_classes(self):
        cfg = SyntheticConfig(normal_videos=2, abnormal_videos=4, dim=4, frames=256, duration_profile="long")
        ds = generate_synthetic_dataset(cfg)
        assert {ds.label(r).anomaly_class for r in ds.abnormals()} <= {"fighting", "improper_zone"}
        with pytest.raises(ConfigError):
            SyntheticConfig(duration_profile="short", classes=("fighting",))

    def test_overlap_oracle_scores_perfect_auc(self):
        gen = SyntheticGenerator(SyntheticConfig(normal_videos=4, abnormal_videos=8, dim=4, frames=512, seed=6))
        ds = gen.produce()
        scores, truth = [], []
        for rec in ds.records:
            label, planted = ds.label(rec), gen.planted[rec.video_id]
            inside = [any(a.response((f, f + 1), 64) > 0 for a in planted) for f in range(label.frames)]
            scores.append(np.array(inside, dtype=float))
            truth.append(label.frame_truth)
        assert roc_auc(np.concatenate(scores), np.concatenate(truth)) == 1.0

    def test_short_videos_clip_long_anomalies(self):
        cfg = SyntheticConfig(normal_videos=1, abnormal_videos=3, dim=4, frames=64, duration_profile="long")
        ds = generate_synthetic_dataset(cfg)
        assert all(ds.label(r).frame_truth.sum() == 64 for r in ds.abnormals())

    def test_save_load(self, tiny_dataset, tmp_path):
        tiny_dataset.save(tmp_path, {"note": "x"})
        assert (tmp_path / LABELS_FILE).is_file()
        assert json.loads((tmp_path / META_FILE).read_text())["source"] == "synthetic"
        back = Dataset.load(tmp_path)
        assert [r.video_id for r in back.records] == [r.video_id for r in tiny_dataset.records]
        assert all(r.source is FeatureSource.SYNTHETIC for r in back.records)
        for a, b in zip(tiny_dataset.records, back.records):
            for ma, mb in zip(a.volume.matrices, b.volume.matrices):
                np.testing.assert_array_equal(ma, mb)

    def test_load_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match=LABELS_FILE):
            Dataset.load(tmp_path)


class TestSampleBatch:
    def test_small_class_filled_with_replacement(self, tiny_dataset):
        batch = sample_batch(tiny_dataset, np.random.default_rng(0))
        assert len(batch.normal) == len(batch.abnormal) == 64
        assert len(batch) == 128
        assert {r.video_id for r in batch.normal} <= {r.video_id for r in tiny_dataset.normals()}

    def test_deterministic(self, tiny_dataset):
        a = sample_batch(tiny_dataset, np.random.default_rng(9), per_class=4)
        b = sample_batch(tiny_dataset, np.random.default_rng(9), per_class=4)
        assert [r.video_id for r in a.abnormal + a.normal] == [r.video_id for r in b.abnormal + b.normal]

    def test_needs_both_classes(self, tiny_dataset):
        only_normal = Dataset(tiny_dataset.normals(), tiny_dataset.labels)
        with pytest.raises(ContractError):
            sample_batch(only_normal, np.random.default_rng(0))
