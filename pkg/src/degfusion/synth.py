"""Synthetic degraded two-sensor scenarios with a known ground truth.

The ground truth is an offset Brownian motion. Both sensors see it through a
shared multiplicative degradation of their own exposure, are subsampled at
different rates and receive independent Gaussian noise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import EXPOSURE_MODES, ExposureSeries, TimeSeries, align, compute_exposure
from .errors import ConfigError, DataError

# one RNG stream per named series; new series get new keys
STREAM_KEYS = {"s": 0, "a": 1, "b": 2}


@dataclass(frozen=True)
class DegradationSpec:
    """Analytic reference degradation.

    ``family`` is ``"exp"`` (``exp(-rate * e)``), ``"linear"``
    (``1 - slope * e``) or ``"tabulated"`` (piecewise linear through
    ``knots``, constant beyond the last knot).
    """

    family: str = "exp"
    rate: float = 0.7
    slope: float = 0.5
    knots: tuple = ((0.0, 1.0), (1.0, 0.5))

    def __post_init__(self):
        if self.family not in ("exp", "linear", "tabulated"):
            raise ConfigError(f"unknown degradation family {self.family!r}")
        if self.family == "tabulated":
            kx = [k[0] for k in self.knots]
            if len(kx) < 1 or np.any(np.diff(kx) <= 0):
                raise ConfigError("tabulated degradation knots must be increasing in exposure")
            object.__setattr__(self, "knots", tuple(tuple(map(float, k)) for k in self.knots))

    def __call__(self, e):
        e = np.asarray(e, dtype=float)
        if self.family == "exp":
            return np.exp(-self.rate * e)
        if self.family == "linear":
            return 1.0 - self.slope * e
        kx, ky = zip(*self.knots)
        return np.interp(e, kx, ky, left=ky[0], right=ky[-1])


@dataclass(frozen=True)
class ScenarioSpec:
    n: int = 20000
    dt: float = 1.0
    brownian_step_sd: float = 0.002
    baseline: float = 1.0
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    exposure_mode: str = "cumulative"
    subsample_a: int = 1
    subsample_b: int = 10
    noise_sd_a: float = 0.005
    noise_sd_b: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.degradation, dict):
            object.__setattr__(self, "degradation", DegradationSpec(**self.degradation))
        if self.n < 2 or self.dt <= 0:
            raise ConfigError("scenario needs n >= 2 and dt > 0")
        if self.subsample_a < 1 or self.subsample_b < 1:
            raise ConfigError("subsample factors must be >= 1")
        if min(self.noise_sd_a, self.noise_sd_b, self.brownian_step_sd) < 0:
            raise ConfigError("standard deviations must be >= 0")
        if self.exposure_mode not in EXPOSURE_MODES:
            raise ConfigError(f"unknown exposure mode {self.exposure_mode!r}")
        if self.baseline <= 3 * self.brownian_step_sd * math.sqrt(self.n):
            warnings.warn(
                "baseline is within 3 standard deviations of the random walk's "
                "spread; the ground truth may turn non-positive",
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"]["knots"] = [list(k) for k in self.degradation.knots]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("degradation"), dict):
            deg = dict(d["degradation"])
            if "knots" in deg:
                deg["knots"] = tuple(tuple(k) for k in deg["knots"])
            d["degradation"] = DegradationSpec(**deg)
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    s: TimeSeries
    a: TimeSeries
    b: TimeSeries
    e_a: ExposureSeries
    e_b: ExposureSeries
    true_degradation: DegradationSpec
    # noiseless degraded values, kept for checks
    a_clean: np.ndarray = field(repr=False, default=None)
    b_clean: np.ndarray = field(repr=False, default=None)


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the series ``name`` under ``seed``."""
    key = STREAM_KEYS.get(name)
    if key is None:
        raise ConfigError(f"no RNG stream registered for {name!r}")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _degraded_exposures(spec, t_a, s_a, t_b, s_b):
    """Exposures consistent with the degraded values they produce.

    In cumulative mode exposure depends on the measured (degraded) values,
    which depend on exposure; the fixed point is found by iteration. The map
    is a contraction whenever the degradation's slope is below one.
    """
    d = spec.degradation
    if spec.exposure_mode == "elapsed":
        span = t_a[-1] - t_a[0]
        e_a = (t_a - t_a[0]) / span
        e_b = np.maximum((t_b - t_a[0]) / span, 0.0)
        return e_a, e_b
    e_a = np.cumsum(s_a) / np.sum(s_a)
    e_b = np.cumsum(s_b) / np.sum(s_a)
    for _ in range(500):
        a = s_a * d(e_a)
        b = s_b * d(e_b)
        total = np.sum(a)
        new_a, new_b = np.cumsum(a) / total, np.cumsum(b) / total
        delta = max(np.max(np.abs(new_a - e_a)), np.max(np.abs(new_b - e_b)))
        e_a, e_b = new_a, new_b
        if delta <= 1e-15:
            break
    else:
        raise DataError("exposure fixed point did not converge; degradation too steep")
    return e_a, e_b


def generate(spec: ScenarioSpec | None = None) -> Scenario:
    """Draw a scenario; identical specs give bit-identical output."""
    spec = spec or ScenarioSpec()
    times = spec.dt * np.arange(spec.n, dtype=float)
    steps = stream(spec.seed, "s").normal(0.0, 1.0, spec.n) * spec.brownian_step_sd
    s = spec.baseline + np.cumsum(steps)
    if np.any(s <= 0):
        raise DataError(
            "ground truth became non-positive; increase the baseline or lower the step size"
        )
    ia = np.arange(0, spec.n, spec.subsample_a)
    ib = np.arange(0, spec.n, spec.subsample_b)
    e_a, e_b = _degraded_exposures(spec, times[ia], s[ia], times[ib], s[ib])
    d = spec.degradation
    a_clean = s[ia] * d(e_a)
    b_clean = s[ib] * d(e_b)
    a = a_clean + stream(spec.seed, "a").normal(0.0, 1.0, ia.size) * spec.noise_sd_a
    b = b_clean + stream(spec.seed, "b").normal(0.0, 1.0, ib.size) * spec.noise_sd_b
    return Scenario(
        spec=spec,
        s=TimeSeries("s", times, s),
        a=TimeSeries("a", times[ia], a),
        b=TimeSeries("b", times[ib], b),
        e_a=ExposureSeries("a", times[ia], e_a),
        e_b=ExposureSeries("b", times[ib], e_b),
        true_degradation=d,
        a_clean=a_clean,
        b_clean=b_clean,
    )


def _truth_at(scenario: Scenario, times):
    idx = np.searchsorted(scenario.s.times, times)
    idx = np.clip(idx, 0, len(scenario.s) - 1)
    if not np.allclose(scenario.s.times[idx], times, rtol=0, atol=1e-9 * max(1.0, scenario.spec.dt)):
        raise DataError("series timestamps are not on the ground-truth grid")
    return scenario.s.values[idx]


def _errors(values, truth):
    err = np.asarray(values) - np.asarray(truth)
    return float(np.sqrt(np.mean(err**2))), float(np.max(np.abs(err)))


def noise_profile(residual, exposure, degradation, noise_sd, bins: int = 10):
    """Empirical vs. predicted variance of a corrected series per exposure bin.

    Bins are exposure quantiles. The prediction is ``noise_sd**2 / d(e)**2``
    averaged over the bin.
    """
    residual = np.asarray(residual, dtype=float)
    exposure = np.asarray(exposure, dtype=float)
    edges = np.quantile(exposure, np.linspace(0, 1, bins + 1))
    which = np.clip(np.searchsorted(edges, exposure, side="right") - 1, 0, bins - 1)
    empirical = np.array([np.var(residual[which == k], ddof=1) for k in range(bins)])
    predicted = np.array(
        [np.mean(noise_sd**2 / degradation(exposure[which == k]) ** 2) for k in range(bins)]
    )
    centers = np.array([np.mean(exposure[which == k]) for k in range(bins)])
    return {"exposure": centers, "empirical": empirical, "predicted": predicted}


def evaluate_recovery(scenario: Scenario, result, posterior=None, exposure_grid: int = 1000) -> dict:
    """Error metrics of a correction (and optional fusion) against the truth.

    Keys ending in ``_common`` are on the aligned grid used by the correction.
    ``a_full`` metrics use the full-resolution ``a`` corrected with the
    learned degradation over exposures recomputed from the measured data.
    """
    from .correction import apply_correction

    times = result.a_corrected.times
    truth = _truth_at(scenario, times)
    out = {}
    rms_s = float(np.sqrt(np.mean(truth**2)))
    for name, series in (("a", result.a_corrected), ("b", result.b_corrected)):
        rmse, mx = _errors(series.values, truth)
        out[f"rmse_{name}_common"] = rmse
        out[f"maxerr_{name}_common"] = mx
        out[f"rel_rmse_{name}_common"] = rmse / rms_s

    e_max = float(np.max(scenario.e_a.exposures))
    grid = np.linspace(0.0, e_max, exposure_grid)
    out["degradation_sup_error"] = float(
        np.max(np.abs(result.degradation(grid) - scenario.true_degradation(grid)))
    )

    ref = scenario.a
    e_a = compute_exposure(scenario.a, scenario.spec.exposure_mode, reference=ref)
    e_b = compute_exposure(scenario.b, scenario.spec.exposure_mode, reference=ref)
    a_full = apply_correction(scenario.a, e_a, result.degradation)
    b_full = apply_correction(scenario.b, e_b, result.degradation)
    truth_a = _truth_at(scenario, scenario.a.times)
    truth_b = _truth_at(scenario, scenario.b.times)
    out["rmse_a_full"], out["maxerr_a_full"] = _errors(a_full.values, truth_a)
    out["rmse_b_full"], out["maxerr_b_full"] = _errors(b_full.values, truth_b)

    prof = noise_profile(
        a_full.values - truth_a,
        scenario.e_a.exposures,
        scenario.true_degradation,
        scenario.spec.noise_sd_a,
    )
    out["noise_profile"] = {k: v.tolist() for k, v in prof.items()}

    if posterior is not None:
        mean_common, _ = posterior.predict(times)
        out["rmse_posterior_common"], out["maxerr_posterior_common"] = _errors(mean_common, truth)
        mean_full, _ = posterior.predict(scenario.s.times)
        out["rmse_posterior_full"], out["maxerr_posterior_full"] = _errors(
            mean_full, scenario.s.values
        )
    return out


def scenario_pair(scenario: Scenario, tol: float = 0.0):
    """Aligned pair built the way the pipeline builds it, from measured data."""
    mode = scenario.spec.exposure_mode
    e_a = compute_exposure(scenario.a, mode, reference=scenario.a)
    e_b = compute_exposure(scenario.b, mode, reference=scenario.a)
    return align(scenario.a, scenario.b, e_a, e_b, tol)
