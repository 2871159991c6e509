import numpy as np
import pytest

from teg.errors import ContractError, ShapeError
from teg.model import predict
from teg.stream import (
    Event,
    LatencyMeter,
    StreamingDetector,
    StreamWindow,
    detect,
    latency_report,
    push_segment,
)


def _triple(rng, dim=8):
    return tuple(rng.normal(size=dim) for _ in range(3))


class TestStreamWindow:
    def test_warm_up_and_full_window(self, rng, tiny_params, tiny_config):
        window = StreamWindow("cam")
        first = push_segment(window, _triple(rng), 0, tiny_params, tiny_config)
        assert first.shape == (1,)
        for i in range(1, 33):
            scores = push_segment(window, _triple(rng), i * 100, tiny_params, tiny_config)
        assert scores.shape == (32,)
        assert len(window) == 32 and window.first_index == 1
        assert window.timestamps[0] == 100

    def test_cold_start_tiles_rows(self, rng):
        window = StreamWindow("cam")
        rows = [_triple(rng) for _ in range(3)]
        for i, r in enumerate(rows):
            window.append(r, i)
        vol = window.volume()
        assert vol.short.shape == (32, 8)
        np.testing.assert_array_equal(vol.short[3], rows[0][0])
        np.testing.assert_array_equal(vol.long[31], rows[31 % 3][2])

    def test_single_segment_scores_like_constant_volume(self, rng, tiny_params, tiny_config):
        window = StreamWindow("cam")
        score = push_segment(window, _triple(rng), 0, tiny_params, tiny_config)
        full = predict(window.volume(), tiny_params, tiny_config)
        np.testing.assert_allclose(full, full[0])
        assert score[0] == pytest.approx(full[0])

    def test_timestamps_must_increase(self, rng, tiny_params, tiny_config):
        window = StreamWindow("cam")
        push_segment(window, _triple(rng), 10, tiny_params, tiny_config)
        with pytest.raises(ContractError):
            push_segment(window, _triple(rng), 10, tiny_params, tiny_config)
        assert len(window) == 1

    def test_bad_triples(self, rng, tiny_params, tiny_config):
        window = StreamWindow("cam")
        with pytest.raises(ShapeError):
            push_segment(window, _triple(rng, dim=5), 0, tiny_params, tiny_config)
        with pytest.raises(ContractError):
            push_segment(window, _triple(rng)[:2], 0, tiny_params, tiny_config)
        bad = list(_triple(rng))
        bad[1] = np.full(8, np.inf)
        with pytest.raises(ContractError):
            push_segment(window, bad, 0, tiny_params, tiny_config)
        assert len(window) == 0

    def test_permuted_arrival_permutes_scores(self, rng, tiny_params, tiny_config):
        rows = [_triple(rng) for _ in range(32)]
        perm = rng.permutation(32)
        a, b = StreamWindow("a"), StreamWindow("b")
        for i in range(32):
            sa = push_segment(a, rows[i], i, tiny_params, tiny_config)
            sb = push_segment(b, rows[perm[i]], i, tiny_params, tiny_config)
        np.testing.assert_allclose(sb, sa[perm], atol=1e-12)


class TestDetect:
    def test_worked_example(self):
        assert detect([0.1, 0.8, 0.9, 0.2], 0.5) == [Event(1, 2, 0.9)]

    def test_min_run_filters_short_runs(self):
        assert detect([0.1, 0.8, 0.9, 0.2], 0.5, min_run=3) == []

    def test_run_reaching_the_end(self):
        (event,) = detect([0.2, 0.6, 0.7], 0.5)
        assert (event.start, event.end, event.length) == (1, 2, 2)

    def test_threshold_is_inclusive(self):
        assert detect([0.5], 0.5) == [Event(0, 0, 0.5)]

    @pytest.mark.parametrize("threshold,min_run", [(0.0, 1), (1.0, 1), (0.5, 0)])
    def test_invalid_arguments(self, threshold, min_run):
        with pytest.raises(ContractError):
            detect([0.3], threshold, min_run)

    def test_events_are_maximal_disjoint_runs(self, rng):
        for _ in range(300):
            scores = rng.uniform(size=int(rng.integers(1, 40)))
            threshold, min_run = float(rng.uniform(0.2, 0.8)), int(rng.integers(1, 4))
            above = scores >= threshold
            events = detect(scores, threshold, min_run)
            covered = np.zeros_like(above)
            for e in events:
                assert e.length >= min_run
                assert above[e.start:e.end + 1].all()
                assert e.start == 0 or not above[e.start - 1]
                assert e.end == len(scores) - 1 or not above[e.end + 1]
                assert e.peak == pytest.approx(scores[e.start:e.end + 1].max())
                assert not covered[e.start:e.end + 1].any()
                covered[e.start:e.end + 1] = True
            if min_run == 1:
                np.testing.assert_array_equal(covered, above)

    def test_streaming_matches_offline(self, rng):
        scores = rng.uniform(size=200)
        det = StreamingDetector(0.6, min_run=2)
        events = [e for i, s in enumerate(scores) if (e := det.feed(s, i * 10)) is not None]
        if (last := det.flush()) is not None:
            events.append(last)
        offline = detect(scores, 0.6, min_run=2)
        assert [(e.start, e.end, e.peak) for e in events] == [(e.start, e.end, e.peak) for e in offline]
        assert all(e.start_ms == e.start * 10 and e.end_ms == e.end * 10 for e in events)

    def test_open_run_reported(self):
        det = StreamingDetector(0.5)
        assert det.feed(0.7) is None and det.open
        assert det.feed(0.1) == Event(0, 0, 0.7)
        assert not det.open


class TestLatency:
    def test_worked_budget(self):
        budget = latency_report(104.96, 3, 2.5, 2133)
        assert budget.total_ms == pytest.approx(317.38)
        assert 14.87 <= budget.fraction_of_segment <= 14.89

    def test_fraction_can_exceed_segment(self):
        assert latency_report(700.0, 3, 33.0, 2133).fraction_of_segment == pytest.approx(100.0)
        assert latency_report(2000.0, 3, 0.0, 2133).fraction_of_segment > 100.0

    def test_scale_invariant_fraction(self):
        a = latency_report(50.0, 3, 4.0, 1000)
        b = latency_report(100.0, 3, 8.0, 2000)
        assert a.fraction_of_segment == pytest.approx(b.fraction_of_segment)

    @pytest.mark.parametrize("args", [(10.0, 3, 1.0, 0), (-1.0, 3, 1.0, 100), (10.0, 0, 1.0, 100)])
    def test_invalid(self, args):
        with pytest.raises(ContractError):
            latency_report(*args)

    def test_meter_moving_average(self):
        meter = LatencyMeter(window=2)
        for ms in (100.0, 10.0, 20.0):
            meter.record_feature(ms)
            meter.record_fusion(ms / 10)
        report = meter.report(1000)
        assert meter.samples == 2
        assert report.per_granularity_feature_ms == pytest.approx(15.0)
        assert report.total_ms == pytest.approx(15.0 * 3 + 1.5)
        assert report.as_dict()["granularity_count"] == 3
