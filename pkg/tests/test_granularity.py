import numpy as np
import pytest

from teg.errors import ContractError, ProviderError, ShapeError
from teg.granularity import (
    ChunkFeatureProvider,
    ConstantChunkProvider,
    FeatureVolume,
    aggregate_segment,
    build_feature_volume,
    plan_chunks,
    segment_bounds,
)


class TestPlanChunks:
    def test_even_division(self):
        plan = plan_chunks(64, 8)
        assert plan.chunk_ranges == tuple((j * 8, (j + 1) * 8) for j in range(8))

    def test_granularity_longer_than_segment(self):
        assert plan_chunks(53, 64).chunk_ranges == ((0, 53),)

    def test_remainder_goes_to_last_chunk(self):
        assert plan_chunks(70, 32).chunk_ranges == ((0, 32), (32, 70))

    def test_ranges_partition_segment(self, rng):
        for _ in range(500):
            length, g = int(rng.integers(1, 300)), int(rng.integers(1, 100))
            ranges = plan_chunks(length, g).chunk_ranges
            assert ranges[0][0] == 0 and ranges[-1][1] == length
            for (a, b), (c, _) in zip(ranges, ranges[1:]):
                assert a < b == c
            if length % g == 0:
                assert len(ranges) == length // g
                assert all(b - a == g for a, b in ranges)

    @pytest.mark.parametrize("length,g", [(0, 8), (8, 0)])
    def test_invalid(self, length, g):
        with pytest.raises(ContractError):
            plan_chunks(length, g)


class TestAggregate:
    def test_hand_mean(self):
        np.testing.assert_array_equal(aggregate_segment([np.array([2.0]), np.array([4.0])]), [3.0])

    def test_single_and_constant(self, rng):
        v = rng.normal(size=5)
        np.testing.assert_array_equal(aggregate_segment([v]), v)
        np.testing.assert_allclose(aggregate_segment([v] * 4), v)

    def test_permutation_invariant(self, rng):
        chunks = [rng.normal(size=3) for _ in range(6)]
        np.testing.assert_allclose(aggregate_segment(chunks), aggregate_segment(chunks[::-1]), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            aggregate_segment([])


class TestSegmentBounds:
    def test_partition(self):
        bounds = segment_bounds(100)
        assert len(bounds) == 32
        assert bounds[0][0] == 0 and bounds[-1][1] == 100
        assert {b - a for a, b in bounds} <= {3, 4}

    def test_too_few_frames(self):
        with pytest.raises(ContractError):
            segment_bounds(31)


class _Recording(ChunkFeatureProvider):
    def __init__(self, dim=2):
        self.dim = dim
        self.calls = []

    def features(self, video_id, frame_range, granularity):
        self.calls.append((frame_range, granularity))
        return np.array([frame_range[0], granularity], dtype=float)[: self.dim]


class _Scaled(ChunkFeatureProvider):
    def __init__(self, base, c):
        self.base, self.c, self.dim = base, c, base.dim

    def features(self, video_id, frame_range, granularity):
        return self.c * self.base.features(video_id, frame_range, granularity)


class _Broken(ChunkFeatureProvider):
    dim = 2

    def features(self, video_id, frame_range, granularity):
        raise RuntimeError("decoder crashed")


class TestBuildFeatureVolume:
    def test_constant_provider(self):
        vol = build_feature_volume(ConstantChunkProvider([1.5, -2.0, 0.25]), "v", 2048)
        for m in vol.matrices:
            assert m.shape == (32, 3)
            np.testing.assert_array_equal(m, np.tile([1.5, -2.0, 0.25], (32, 1)))

    def test_short_rows_average_eight_chunks(self):
        provider = _Recording()
        build_feature_volume(provider, "v", 2048)
        short_calls = [c for c in provider.calls if c[1] == 8]
        assert len(short_calls) == 32 * 8

    def test_linear_in_provider(self):
        base = _Recording()
        a = build_feature_volume(base, "v", 512)
        b = build_feature_volume(_Scaled(_Recording(), 3.0), "v", 512)
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_allclose(mb, 3.0 * ma)

    def test_threaded_matches_sequential(self):
        a = build_feature_volume(_Recording(), "v", 640)
        b = build_feature_volume(_Recording(), "v", 640, workers=4)
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(ma, mb)

    def test_provider_failure_has_context(self):
        with pytest.raises(ProviderError, match="segment=0 granularity=8") as info:
            build_feature_volume(_Broken(), "cam-1", 64)
        assert isinstance(info.value.__cause__, RuntimeError)


class TestFeatureVolume:
    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            FeatureVolume("v", rng.normal(size=(32, 4)), rng.normal(size=(32, 4)), rng.normal(size=(32, 5)))

    def test_non_finite(self):
        m = np.zeros((32, 2))
        bad = m.copy()
        bad[3, 1] = np.nan
        with pytest.raises(ContractError):
            FeatureVolume("v", m, m, bad)

    def test_restrict_to(self, make_volume):
        vol = make_volume()
        only_long = vol.restrict_to("long")
        for m in only_long.matrices:
            np.testing.assert_array_equal(m, vol.long)
        assert only_long.granularities == (64, 64, 64)
        with pytest.raises(ContractError):
            vol.restrict_to("huge")
