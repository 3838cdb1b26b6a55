import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from degfusion import (
    AlignmentError,
    DataError,
    TimeSeries,
    align,
    compute_exposure,
    ratio,
    relative_change,
)
from degfusion.core import default_guard, ratio_of

positive_lists = st.lists(
    st.floats(0.01, 100.0, allow_nan=False), min_size=1, max_size=40
)


def ts(values, times=None, sensor="a"):
    values = np.asarray(values, float)
    times = np.arange(values.size, dtype=float) if times is None else times
    return TimeSeries(sensor, times, values)


class TestTimeSeries:
    def test_rejects_non_increasing_times(self):
        with pytest.raises(DataError, match="index 2"):
            TimeSeries("a", [0.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            TimeSeries("a", [0.0, 1.0], [1.0, np.nan])

    def test_rejects_empty_label_and_length_mismatch(self):
        with pytest.raises(DataError):
            TimeSeries("", [0.0], [1.0])
        with pytest.raises(DataError):
            TimeSeries("a", [0.0, 1.0], [1.0])

    def test_arrays_are_copied_and_read_only(self):
        v = np.array([1.0, 2.0])
        s = TimeSeries("a", [0.0, 1.0], v)
        v[0] = 9.0
        assert s.values[0] == 1.0
        with pytest.raises(ValueError):
            s.values[0] = 3.0


class TestExposure:
    def test_constant_series_is_linear(self):
        e = compute_exposure(ts([1, 1, 1, 1]), "cumulative")
        assert_allclose(e.exposures, [0.25, 0.5, 0.75, 1.0], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 7, 100])
    def test_repeated_value_gives_k_over_n(self, n):
        e = compute_exposure(ts(np.full(n, 3.7)), "cumulative")
        assert_allclose(e.exposures, np.arange(1, n + 1) / n, rtol=1e-14)

    def test_hand_computed_prefix_sum(self):
        # oracle: explicit running total written out by hand
        values = [2.0, 1.0, 1.0]
        running, expected = 0.0, []
        for v in values:
            running += v
            expected.append(running / sum(values))
        e = compute_exposure(ts(values), "cumulative")
        assert_allclose(e.exposures, expected, rtol=1e-15)
        assert_allclose(e.exposures, [0.5, 0.75, 1.0])

    def test_reference_normalization(self):
        a = ts([1, 1, 1, 1], sensor="a")
        b = ts([1, 1], times=np.array([0.0, 2.0]), sensor="b")
        e = compute_exposure(b, "cumulative", reference=a)
        assert_allclose(e.exposures, [0.25, 0.5])

    def test_elapsed_mode(self):
        a = ts([5, 5, 5], times=np.array([10.0, 12.0, 14.0]))
        assert_allclose(compute_exposure(a, "elapsed").exposures, [0.0, 0.5, 1.0])
        raw = compute_exposure(a, "elapsed", normalize=False).exposures
        assert_allclose(raw, [0.0, 2.0, 4.0])

    def test_non_positive_values_rejected_in_cumulative_mode(self):
        with pytest.raises(DataError, match="positive"):
            compute_exposure(ts([1.0, -1.0]), "cumulative")

    def test_unknown_mode(self):
        with pytest.raises(DataError):
            compute_exposure(ts([1.0]), "bogus")

    @given(positive_lists)
    def test_monotone_and_ends_at_one(self, values):
        e = compute_exposure(ts(values), "cumulative").exposures
        assert np.all(np.diff(e) >= 0)
        assert e[-1] == pytest.approx(1.0, rel=1e-12)


class TestAlign:
    def exposures(self, a, b):
        return compute_exposure(a, reference=a), compute_exposure(b, reference=a)

    def test_exact_intersection(self):
        a = ts([1, 1, 1, 1], times=np.array([0.0, 1, 2, 3]), sensor="a")
        b = ts([1, 1], times=np.array([0.0, 2.0]), sensor="b")
        p = align(a, b, *self.exposures(a, b))
        assert_array_equal(p.times, [0.0, 2.0])
        assert_array_equal(p.a_index, [0, 2])
        assert_array_equal(p.b_index, [0, 1])

    def test_identical_grids_cover_everything(self):
        a = ts([1.0, 2.0, 3.0], sensor="a")
        b = ts([1.0, 2.0, 3.0], sensor="b")
        p = align(a, b, *self.exposures(a, b))
        assert len(p) == 3
        assert_array_equal(p.a_values, a.values)

    def test_tolerance_matching_against_brute_force(self):
        a = ts([1.0, 2.0, 3.0], times=np.array([0.0, 1.001, 2.0]), sensor="a")
        b = ts([1.0, 2.0, 3.0], times=np.array([0.0, 1.0, 2.0]), sensor="b")
        p = align(a, b, *self.exposures(a, b), tol=0.01)
        # brute force: all pairs within tolerance, each sample used once
        pairs = [
            (i, j)
            for i, j in itertools.product(range(3), range(3))
            if abs(a.times[i] - b.times[j]) <= 0.01
        ]
        assert len(pairs) == 3
        assert_array_equal(p.a_index, [i for i, _ in pairs])
        assert_array_equal(p.b_index, [j for _, j in pairs])
        assert_allclose(p.times, [0.0, 1.001, 2.0])

    def test_nearest_neighbour_wins(self):
        a = ts([1.0, 1.0], times=np.array([0.0, 1.0]), sensor="a")
        b = ts([1.0, 1.0, 1.0], times=np.array([0.0, 0.95, 1.02]), sensor="b")
        p = align(a, b, *self.exposures(a, b), tol=0.1)
        assert_array_equal(p.b_index, [0, 2])

    def test_too_few_common_samples(self):
        a = ts([1.0, 1.0], times=np.array([0.0, 1.0]), sensor="a")
        b = ts([1.0, 1.0], times=np.array([0.5, 1.0]), sensor="b")
        with pytest.raises(AlignmentError):
            align(a, b, *self.exposures(a, b))

    def test_self_alignment_is_rejected_by_label(self):
        a = ts([1.0, 2.0])
        e = compute_exposure(a)
        with pytest.raises(DataError):
            align(a, a, e, e)

    @given(positive_lists)
    def test_same_signal_under_two_labels_keeps_all(self, values):
        if len(values) < 2:
            return
        a = ts(values, sensor="a")
        b = ts(values, sensor="b")
        p = align(a, b, *self.exposures(a, b))
        assert len(p) == len(values)


class TestRatio:
    def pair(self, a_vals, b_vals):
        a = ts(a_vals, sensor="a")
        b = ts(b_vals, sensor="b")
        return align(a, b, compute_exposure(a), compute_exposure(b, reference=a))

    def test_equal_signals(self):
        r = ratio(self.pair([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))
        assert_array_equal(r.ratio, 1.0)
        assert r.dropped == 0

    def test_proportional(self):
        assert_allclose(ratio(self.pair([2.0, 4.0], [1.0, 2.0])).ratio, [2.0, 2.0])

    def test_closed_form_degradation_ratio(self):
        # s = 1, d(e) = exp(-e), e_a = t, e_b = t / 2, evaluated at t = 1
        r = ratio_of([np.exp(-1.0)], [np.exp(-0.5)], [1.0])
        assert r.ratio[0] == pytest.approx(np.exp(-0.5), rel=1e-15)
        assert r.ratio[0] == pytest.approx(0.6065306597, abs=1e-10)

    def test_guard_drops_tiny_denominators(self):
        r = ratio_of([1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [0.1, 0.2, 0.3])
        assert r.dropped == 1
        assert_allclose(r.exposure, [0.1, 0.3])

    def test_default_guard(self):
        assert default_guard([2.0, -4.0, 6.0]) == pytest.approx(4e-12)

    @settings(max_examples=50)
    @given(positive_lists, positive_lists)
    def test_common_factor_cancels(self, s_vals, f_vals):
        n = min(len(s_vals), len(f_vals))
        if n < 2:
            return
        s = np.asarray(s_vals[:n])
        f = np.asarray(f_vals[:n])
        r1 = ratio_of(s, 0.5 * s, np.linspace(0, 1, n)).ratio
        r2 = ratio_of(f * s, f * 0.5 * s, np.linspace(0, 1, n)).ratio
        assert_allclose(r1, r2, rtol=1e-13)


class TestRelativeChange:
    def test_fixed_point(self):
        x, y = np.array([1.0, 2.0]), np.array([3.0])
        assert relative_change(x, x, y, y) == 0.0

    def test_direct_norm(self):
        assert relative_change([1.0], [2.0], [1.0], [1.0]) == pytest.approx(1.0)

    @given(st.floats(1e-3, 1e3))
    def test_scale_invariance(self, c):
        pa, na = np.array([1.0, 2.0, 3.0]), np.array([1.5, 2.0, 2.5])
        pb, nb = np.array([0.5, 0.25]), np.array([0.4, 0.3])
        base = relative_change(pa, na, pb, nb)
        assert relative_change(c * pa, c * na, c * pb, c * nb) == pytest.approx(base, rel=1e-12)
