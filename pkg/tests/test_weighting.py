import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rescp import ConfigError, DataError
from rescp.weighting import (
    WeightVector,
    apply_temporal_decay,
    effective_sample_size,
    similarity_scores,
    softmax_weights,
)

finite = st.floats(-50, 50, allow_nan=False)
score_vectors = arrays(float, st.integers(1, 30), elements=finite)


class TestSimilarity:
    def test_self_cosine(self):
        v = np.array([0.3, -2.0, 1.5])
        assert similarity_scores(v, [v])[0] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert similarity_scores([1, 0], [[0, 1]])[0] == 0.0

    def test_diagonal(self):
        assert similarity_scores([1, 0], [[1, 1]])[0] == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_dot(self):
        np.testing.assert_array_equal(similarity_scores([1, 2], [[3, 4], [0, 1]], kind="dot"), [11, 2])

    def test_zero_norm_scores_zero(self):
        np.testing.assert_array_equal(similarity_scores([1, 0], [[0, 0], [2, 0]]), [0.0, 1.0])
        np.testing.assert_array_equal(similarity_scores([0, 0], [[1, 0]]), [0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            similarity_scores([1, 0, 0], [[1, 0]])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            similarity_scores([1], [[1]], kind="euclid")

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 5, elements=finite), arrays(float, (4, 5), elements=finite))
    def test_cosine_bounded(self, q, states):
        s = similarity_scores(q, states)
        assert np.all(np.abs(s) <= 1.0)


class TestSoftmax:
    def test_uniform(self):
        w = softmax_weights([2.0] * 4, 0.3)
        np.testing.assert_array_equal(w.weights, [0.25] * 4)
        assert w.ess == 4

    def test_closed_form(self):
        w = softmax_weights([0.0, math.log(3)], 1.0)
        np.testing.assert_allclose(w.weights, [0.25, 0.75], rtol=0, atol=1e-15)

    def test_one_hot_limit(self):
        w = softmax_weights([0.0, 100.0], 0.01)
        assert w.weights[1] == pytest.approx(1.0, abs=1e-15)
        assert w.weights[0] < 1e-300
        assert w.ess == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(DataError, match="empty calibration set"):
            softmax_weights([], 1.0)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_temperature(self, tau):
        with pytest.raises(ConfigError):
            softmax_weights([1.0], tau)

    def test_non_finite(self):
        with pytest.raises(DataError):
            softmax_weights([1.0, math.inf], 1.0)

    @settings(max_examples=100, deadline=None)
    @given(score_vectors, st.floats(-1e3, 1e3), st.floats(0.01, 10))
    def test_shift_invariance(self, z, c, tau):
        a = softmax_weights(z, tau).weights
        b = softmax_weights(z + c, tau).weights
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, st.integers(1, 30), elements=st.floats(-1, 1)))
    def test_large_temperature_uniform(self, z):
        w = softmax_weights(z, 1e9).weights
        assert np.max(np.abs(w - 1 / z.size)) < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(score_vectors)
    def test_small_temperature_argmax(self, z):
        top = np.max(z)
        if np.sum(z >= top - 1e-3) > 1:
            return  # needs a unique, separated maximum
        w = softmax_weights(z, 1e-6).weights
        assert w[np.argmax(z)] == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(score_vectors, st.floats(0.001, 100))
    def test_normalized(self, z, tau):
        w = softmax_weights(z, tau)
        assert math.fsum(w.weights) == pytest.approx(1.0, abs=1e-12)
        assert np.all(w.weights >= 0)
        assert 1 <= w.ess <= z.size


class TestDecay:
    def test_none_is_identity(self):
        w = WeightVector.from_weights([0.2, 0.3, 0.5])
        out = apply_temporal_decay(w, [1, 2, 3], 5, "none")
        np.testing.assert_array_equal(out.weights, w.weights)

    def test_linear(self):
        out = apply_temporal_decay([0.5, 0.5], [9, 8], 10, "linear")
        np.testing.assert_allclose(out.weights, [2 / 3, 1 / 3], rtol=0, atol=1e-15)
        assert out.ess == pytest.approx(1 / (4 / 9 + 1 / 9), rel=1e-12)

    def test_exponential_one_is_identity(self):
        w = [0.1, 0.6, 0.3]
        out = apply_temporal_decay(w, [1, 4, 7], 50, ("exponential", 1.0))
        np.testing.assert_allclose(out.weights, w, rtol=0, atol=1e-15)

    def test_exponential(self):
        out = apply_temporal_decay([0.5, 0.5], [0, 1], 3, "exponential:0.5")
        # factors 0.125, 0.25
        np.testing.assert_allclose(out.weights, [1 / 3, 2 / 3], rtol=0, atol=1e-15)

    def test_exponential_far_past_does_not_underflow(self):
        out = apply_temporal_decay([0.5, 0.5], [0, 1], 100_000, ("exponential", 0.9))
        assert np.all(np.isfinite(out.weights))
        assert math.fsum(out.weights) == pytest.approx(1.0, abs=1e-12)

    def test_not_past(self):
        with pytest.raises(DataError, match="calibration point not in the past"):
            apply_temporal_decay([0.5, 0.5], [1, 5], 5, "linear")

    @pytest.mark.parametrize("schedule", ["cubic", ("exponential", 0.0), ("exponential", 1.5), "linear:2"])
    def test_bad_schedule(self, schedule):
        with pytest.raises(ConfigError):
            apply_temporal_decay([1.0], [0], 1, schedule)

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(float, st.integers(1, 25), elements=st.floats(0.001, 1)),
        st.sampled_from(["linear", ("exponential", 0.9), ("exponential", 0.5)]),
        st.integers(1, 1000),
    )
    def test_renormalized(self, raw, schedule, gap):
        w = raw / raw.sum()
        times = np.arange(w.size)
        out = apply_temporal_decay(w, times, w.size - 1 + gap, schedule)
        assert math.fsum(out.weights) == pytest.approx(1.0, abs=1e-12)
        assert 1 <= out.ess <= w.size


class TestESS:
    def test_uniform(self):
        assert effective_sample_size([0.25] * 4) == 4

    def test_one_hot(self):
        assert effective_sample_size([0, 1, 0]) == 1

    def test_half(self):
        assert effective_sample_size([0.5, 0.5, 0, 0]) == 2

    def test_all_zero(self):
        with pytest.raises(DataError, match="unnormalized weights"):
            effective_sample_size([0.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, st.integers(1, 50), elements=st.floats(0, 1)))
    def test_bounds(self, raw):
        if raw.sum() <= 0:
            return
        w = raw / raw.sum()
        ess = effective_sample_size(w)
        assert 1 <= ess <= w.size
        assert ess == pytest.approx(1 / math.fsum(w**2), rel=1e-9) or ess in (1, np.count_nonzero(w))
