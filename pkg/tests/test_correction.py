import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from degfusion import (
    AlignedPair,
    ConfigError,
    CorrectionConfig,
    DegradationUnderflowError,
    ExposureSeries,
    TimeSeries,
    apply_correction,
    correct,
    correct_both,
    correct_one,
)
from degfusion.degmodels import FitSpec, FittedDegradationModel, fit_curve
from degfusion.synth import ScenarioSpec, generate, scenario_pair


def closed_form_pair(n_points=2001, horizon=1.0):
    """s = 1, d(e) = exp(-e), e_a = t, e_b = t / 2 on a common grid."""
    t = np.linspace(0.0, horizon, n_points)
    return AlignedPair(t, np.exp(-t), np.exp(-t / 2), t, t / 2)


DENSE = FitSpec(family="smooth", m=1000, lam=1.0)


def flat_model():
    return FittedDegradationModel("isotonic", knots_x=[0.0, 1.0], knots_y=[1.0, 1.0])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            CorrectionConfig(epsilon=0.0)
        with pytest.raises(ConfigError):
            CorrectionConfig(max_iterations=0)
        with pytest.raises(ConfigError):
            CorrectionConfig(method="three")

    def test_method_aliases(self):
        assert CorrectionConfig(method="CorrectBoth").method == "both"
        assert CorrectionConfig(method="correct_one").method == "one"


class TestClosedFormIterates:
    @pytest.mark.parametrize("method", ["one", "both"])
    def test_b_iterate_at_t1(self, method):
        p = closed_form_pair()
        res = correct(p, CorrectionConfig(method=method, fit_spec=DENSE))
        h = res.history[2]  # third pass: b_3
        assert h.iteration == 3
        assert h.b_values[-1] == pytest.approx(np.exp(-1 / 16), abs=1e-3)
        assert h.b_values[-1] == pytest.approx(0.93941, abs=1e-3)


class TestFixedPoints:
    @pytest.mark.parametrize("method", ["one", "both"])
    def test_identical_sensors(self, method):
        t = np.linspace(0.0, 1.0, 200)
        v = 1.0 + 0.1 * np.sin(5 * t)
        p = AlignedPair(t, v, v, t, t / 2)
        res = correct(p, CorrectionConfig(method=method))
        assert res.converged and res.iterations_used == 1
        assert_allclose(res.a_corrected.values, v, rtol=1e-12)
        assert_allclose(res.b_corrected.values, v, rtol=1e-12)
        assert_allclose(res.degradation(np.linspace(0, 1, 11)), 1.0, atol=1e-12)

    def test_no_degradation_any_signal(self):
        sc = generate(
            ScenarioSpec(n=2000, noise_sd_a=0.0, noise_sd_b=0.0, degradation={"family": "linear", "slope": 0.0})
        )
        res = correct_one(scenario_pair(sc), CorrectionConfig())
        assert res.history[0].relative_change <= 1e-6
        p = scenario_pair(sc)
        assert_allclose(res.b_corrected.values, p.b_values, rtol=1e-9)


class TestNoiselessRecovery:
    def test_methods_agree(self):
        sc = generate(ScenarioSpec(n=5000, noise_sd_a=0.0, noise_sd_b=0.0, seed=4))
        p = scenario_pair(sc)
        one = correct_one(p)
        both = correct_both(p)
        assert one.converged and both.converged
        s = np.interp(p.times, sc.s.times, sc.s.values)
        diff = np.linalg.norm(one.a_corrected.values - both.a_corrected.values)
        assert diff / np.linalg.norm(s) <= 1e-3

    def test_history_contract(self):
        sc = generate(ScenarioSpec(n=3000, noise_sd_a=0.0, noise_sd_b=0.0, seed=1))
        cfg = CorrectionConfig(epsilon=1e-6)
        res = correct_one(scenario_pair(sc), cfg)
        assert len(res.history) == res.iterations_used
        assert [h.iteration for h in res.history] == list(range(1, res.iterations_used + 1))
        assert all(np.isfinite(h.relative_change) for h in res.history)
        assert res.history[-1].relative_change <= cfg.epsilon
        assert all(h.relative_change > cfg.epsilon for h in res.history[:-1])
        grid = np.linspace(0.0, 1.5, 3001)
        assert np.all(np.diff(res.degradation(grid)) <= 0)
        assert res.degradation(0.0) == 1.0

    def test_iteration_cap(self):
        res = correct_one(closed_form_pair(201), CorrectionConfig(max_iterations=2, fit_spec=FitSpec(m=100)))
        assert not res.converged
        assert res.iterations_used == 2

    def test_matches_textbook_loop(self):
        # independent transcription: fit a0 / b_c, divide the ORIGINAL a and b
        p = closed_form_pair(301)
        cfg = CorrectionConfig(fit_spec=FitSpec(m=100), max_iterations=6, epsilon=1e-30)
        res = correct_one(p, cfg)
        b_c = p.b_values.copy()
        for h in res.history:
            f = fit_curve(p.e_a, p.a_values / b_c, cfg.fit_spec)
            a_c, b_c = p.a_values / f(p.e_a), p.b_values / f(p.e_b)
            assert_allclose(h.a_values, a_c, rtol=1e-9)
            assert_allclose(h.b_values, b_c, rtol=1e-9)

    def test_both_divides_current_iterates(self):
        p = closed_form_pair(301)
        cfg = CorrectionConfig(method="both", fit_spec=FitSpec(m=100), max_iterations=5, epsilon=1e-30)
        res = correct_both(p, cfg)
        a_c, b_c = p.a_values.copy(), p.b_values.copy()
        for h in res.history:
            f = fit_curve(p.e_a, a_c / b_c, cfg.fit_spec)
            a_c, b_c = a_c / f(p.e_a), b_c / f(p.e_b)
            assert_allclose(h.b_values, b_c, rtol=1e-9)
        # the reported degradation is refitted against the original a
        d = fit_curve(p.e_a, p.a_values / b_c, cfg.fit_spec)
        assert_allclose(res.degradation.knots_y, d.knots_y, rtol=1e-12)


class TestApplyCorrection:
    def test_identity(self):
        s = TimeSeries("a", [0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        e = ExposureSeries("a", s.times, [0.1, 0.2, 0.3])
        assert_array_equal(apply_correction(s, e, flat_model()).values, s.values)

    def test_defining_ratio(self):
        d = FittedDegradationModel("isotonic", knots_x=[0.0, 1.0], knots_y=[1.0, 0.5])
        s = TimeSeries("a", [0.0], [0.5])
        e = ExposureSeries("a", [0.0], [1.0])
        assert apply_correction(s, e, d).values[0] == 1.0

    def test_underflow(self):
        d = FittedDegradationModel("isotonic", knots_x=[0.0, 1.0], knots_y=[1.0, 0.0])
        s = TimeSeries("a", [0.0, 1.0], [1.0, 1.0])
        e = ExposureSeries("a", s.times, [0.5, 1.0])
        with pytest.raises(DegradationUnderflowError, match="sample 1"):
            apply_correction(s, e, d)

    def test_mismatched_exposure(self):
        s = TimeSeries("a", [0.0, 1.0], [1.0, 1.0])
        e = ExposureSeries("a", [0.0, 2.0], [0.5, 1.0])
        with pytest.raises(ConfigError):
            apply_correction(s, e, flat_model())

    def test_noise_variance_scales_inverse_square(self):
        rng = np.random.default_rng(0)
        sigma, draws = 0.01, 10_000
        d = FittedDegradationModel("isotonic", knots_x=[0.0, 1.0], knots_y=[1.0, 0.5])
        for e in (0.0, 0.4, 1.0):
            noise = sigma * rng.standard_normal(draws)
            s = TimeSeries("a", np.arange(draws, dtype=float), d(e) + noise)
            ex = ExposureSeries("a", s.times, np.full(draws, e))
            var = np.var(apply_correction(s, ex, d).values)
            assert var == pytest.approx(sigma**2 / d(e) ** 2, rel=0.1)


def test_result_serializes():
    res = correct_one(closed_form_pair(101), CorrectionConfig(fit_spec=FitSpec(m=50)))
    doc = json.loads(json.dumps(res.to_dict()))
    assert doc["iterations_used"] == res.iterations_used
    assert len(doc["history"]) == res.iterations_used
    assert FittedDegradationModel.from_dict(doc["degradation"]).family == "smooth"
    assert doc["b_corrected"]["values"] == res.b_corrected.values.tolist()
