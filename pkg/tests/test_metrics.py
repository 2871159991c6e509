import itertools

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from teg.data import Dataset
from teg.errors import ContractError, UndefinedMetricError
from teg.metrics import (
    FrameScoreTrace,
    average_precision,
    binary_confusion_metrics,
    evaluate,
    expand_scores_to_frames,
    frame_level_auc,
    roc_auc,
    score_dataset,
)
from teg.model import TeGConfig, init_params


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def rank_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += hits / rank
    return total / sum(labels)


class TestExpansion:
    def test_even_split(self):
        frames = expand_scores_to_frames(np.arange(32) / 32, 64)
        np.testing.assert_array_equal(frames, np.repeat(np.arange(32) / 32, 2))

    def test_uneven_split_covers_every_frame(self):
        frames = expand_scores_to_frames(np.arange(32, dtype=float), 100)
        assert frames.shape == (100,)
        _, counts = np.unique(frames, return_counts=True)
        assert set(counts) <= {3, 4} and counts.sum() == 100
        assert np.all(np.diff(frames) >= 0)

    def test_constant(self):
        np.testing.assert_array_equal(expand_scores_to_frames(np.full(32, 0.3), 77), np.full(77, 0.3))

    def test_too_few_frames(self):
        with pytest.raises(ContractError):
            expand_scores_to_frames(np.zeros(32), 31)


class TestRocAuc:
    def test_worked_example(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_and_inverted(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == pytest.approx(0.5)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_exhaustive_small_inputs(self, rng):
        for n in range(2, 9):
            for labels in itertools.product((0, 1), repeat=n):
                if 0 < sum(labels) < n:
                    scores = rng.integers(0, 4, size=n) / 4.0
                    assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_matches_sklearn(self, rng):
        scores, labels = rng.uniform(size=500), rng.integers(0, 2, size=500)
        assert roc_auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)

    def test_invariant_under_monotone_transform(self, rng):
        scores, labels = rng.uniform(size=200), rng.integers(0, 2, size=200)
        assert roc_auc(np.exp(3 * scores), labels) == pytest.approx(roc_auc(scores, labels), abs=1e-12)


class TestAveragePrecision:
    def test_worked_example(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.8333, abs=1e-4)

    def test_single_and_all_positive(self):
        assert average_precision([0.2, 0.9, 0.1], [0, 1, 0]) == 1.0
        assert average_precision([0.3, 0.1, 0.2], [1, 1, 1]) == 1.0

    def test_exhaustive_small_inputs(self, rng):
        for n in range(1, 9):
            for labels in itertools.product((0, 1), repeat=n):
                if sum(labels):
                    scores = rng.permutation(n) / n
                    assert average_precision(scores, labels) == pytest.approx(rank_ap(scores, labels), abs=1e-12)

    def test_no_positive(self):
        with pytest.raises(UndefinedMetricError):
            average_precision([0.1, 0.2], [0, 0])


class TestBinaryConfusion:
    @pytest.mark.parametrize("videos,detected,accuracy,f1", [
        (18, 15, 0.8333, 0.909),
        (91, 72, 0.7912, 0.883),
        (109, 87, 0.7982, 0.888),
    ])
    def test_anomaly_only_groups(self, videos, detected, accuracy, f1):
        scores = [0.9] * detected + [0.1] * (videos - detected)
        out = binary_confusion_metrics(scores, 0.5, [1] * videos)
        assert out.predicted_abnormal == detected
        assert out.predicted_normal == videos - detected
        assert out.fp == 0
        assert out.accuracy == pytest.approx(accuracy, abs=5e-4)
        assert out.f1 == pytest.approx(f1, abs=5e-4)

    def test_threshold_is_inclusive(self):
        out = binary_confusion_metrics([0.5, 0.49], 0.5, [1, 0])
        assert (out.tp, out.tn) == (1, 1)

    @pytest.mark.parametrize("threshold", [0.0, 1.0])
    def test_threshold_range(self, threshold):
        with pytest.raises(ContractError):
            binary_confusion_metrics([0.5], threshold, [1])


class TestEvaluate:
    def test_report(self, tiny_dataset):
        cfg = TeGConfig(dim=tiny_dataset.dim, heads=2, fcn_hidden=(16, 8))
        params = init_params(cfg, seed=0)
        traces = score_dataset(tiny_dataset, params, cfg)
        assert len(traces) == len(tiny_dataset)
        assert all(t.frame_scores.shape == (256,) for t in traces)
        report = evaluate(tiny_dataset, params, cfg, traces=traces)
        assert report["videos"] == len(tiny_dataset)
        assert 0.0 <= report["auc"] <= 1.0
        assert report["auc"] == pytest.approx(frame_level_auc(traces))
        assert set(report["breakdown"]) <= {"seen", "unseen", "all_anomalies"}
        assert "normal" in report["per_class"]
        assert report["confusion"]["tp"] + report["confusion"]["fn"] == len(tiny_dataset.abnormals())

    def test_trace_json(self):
        trace = FrameScoreTrace("v", np.array([0.2, 0.7]), np.array([0.2, 0.2, 0.7]), np.array([0, 1, 1]))
        row = trace.to_json()
        assert row["max_score"] == 0.7 and row["frame_truth"] == [0, 1, 1]
        with pytest.raises(ContractError):
            FrameScoreTrace("v", np.array([0.2]), np.array([0.2, 0.3]), np.array([0]))

    def test_normal_only_dataset_has_undefined_auc(self, tiny_dataset):
        only_normal = Dataset(tiny_dataset.normals(), tiny_dataset.labels)
        traces = [FrameScoreTrace(r.video_id, np.full(32, 0.1), np.full(256, 0.1), np.zeros(256)) for r in only_normal.records]
        with pytest.raises(UndefinedMetricError):
            frame_level_auc(traces)

    def test_frame_auc_skips_videos_without_truth(self):
        traces = [
            FrameScoreTrace("a", np.array([0.9]), np.array([0.9, 0.2]), np.array([1, 0])),
            FrameScoreTrace("b", np.array([0.1]), np.array([0.95, 0.95]), None),
            FrameScoreTrace("c", np.array([0.3]), np.array([0.3, 0.1]), np.array([0, 0])),
        ]
        assert frame_level_auc(traces) == pytest.approx(1.0)

    def test_frame_auc_without_any_truth_is_undefined(self):
        traces = [FrameScoreTrace("a", np.array([0.5]), np.array([0.5, 0.5]), None)]
        with pytest.raises(UndefinedMetricError, match="frame truth"):
            frame_level_auc(traces)
