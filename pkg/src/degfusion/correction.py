"""Iterative degradation correction of a two-sensor pair."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import AlignedPair, ExposureSeries, TimeSeries, ratio_of, relative_change
from .degmodels import FitSpec, FittedDegradationModel, fit_curve
from .errors import ConfigError, DegradationUnderflowError, FitError

log = logging.getLogger(__name__)

METHODS = ("one", "both")
SNAPSHOT_CAP = 64


def canonical_method(name: str) -> str:
    key = str(name).strip().lower().replace("correct", "").replace("_", "")
    if key not in METHODS:
        raise ConfigError(f"unknown correction method {name!r}; expected 'one' or 'both'")
    return key


@dataclass(frozen=True)
class CorrectionConfig:
    method: str = "one"
    fit_spec: FitSpec = field(default_factory=FitSpec)
    epsilon: float = 1e-6
    max_iterations: int = 50
    eps_guard: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if int(self.max_iterations) < 1:
            raise ConfigError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fit_spec": self.fit_spec.to_dict(),
            "epsilon": self.epsilon,
            "max_iterations": self.max_iterations,
            "eps_guard": self.eps_guard,
        }


@dataclass(frozen=True)
class IterationRecord:
    """One pass of the correction loop.

    ``model``, ``a_values`` and ``b_values`` are kept for the first
    ``SNAPSHOT_CAP`` iterations only and are ``None`` afterwards.
    """

    iteration: int
    relative_change: float
    residual: float
    dropped: int
    model: FittedDegradationModel | None = None
    a_values: np.ndarray | None = None
    b_values: np.ndarray | None = None

    def to_dict(self, include_iterates: bool = False) -> dict:
        d = {
            "iteration": self.iteration,
            "relative_change": self.relative_change,
            "residual": self.residual,
            "dropped": self.dropped,
            "model": None if self.model is None else self.model.to_dict(),
        }
        if include_iterates and self.a_values is not None:
            d["a_values"] = self.a_values.tolist()
            d["b_values"] = self.b_values.tolist()
        return d


@dataclass(frozen=True)
class CorrectionResult:
    a_corrected: TimeSeries
    b_corrected: TimeSeries
    degradation: FittedDegradationModel
    history: tuple
    converged: bool
    iterations_used: int
    method: str = "one"

    def to_dict(self, include_iterates: bool = False) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations_used": self.iterations_used,
            "degradation": self.degradation.to_dict(),
            "history": [h.to_dict(include_iterates) for h in self.history],
            "a_corrected": {
                "sensor": self.a_corrected.sensor,
                "times": self.a_corrected.times.tolist(),
                "values": self.a_corrected.values.tolist(),
            },
            "b_corrected": {
                "sensor": self.b_corrected.sensor,
                "times": self.b_corrected.times.tolist(),
                "values": self.b_corrected.values.tolist(),
            },
        }


def _fit(e, a_num, b_den, cfg: CorrectionConfig, iteration: int, warm):
    rs = ratio_of(a_num, b_den, e, cfg.eps_guard)
    try:
        f = fit_curve(rs.exposure, rs.ratio, cfg.fit_spec, warm_start=warm)
    except FitError as exc:
        raise FitError(
            f"iteration {iteration}: {exc}", best_params=exc.best_params, residual=exc.residual
        ) from exc
    return f, rs.dropped


def _run(p: AlignedPair, cfg: CorrectionConfig, both: bool) -> CorrectionResult:
    a0, b0 = p.a_values, p.b_values
    a_c, b_c = a0.copy(), b0.copy()
    history = []
    converged = False
    f = None
    for it in range(1, cfg.max_iterations + 1):
        numerator = a_c if both else a0
        f, dropped = _fit(p.e_a, numerator, b_c, cfg, it, f)
        fa, fb = f(p.e_a), f(p.e_b)
        if both:
            a_new, b_new = a_c / fa, b_c / fb
        else:
            a_new, b_new = a0 / fa, b0 / fb
        change = relative_change(a_c, a_new, b_c, b_new)
        if not np.isfinite(change):
            raise FitError(f"iteration {it}: correction produced non-finite values")
        keep = it <= SNAPSHOT_CAP
        history.append(
            IterationRecord(
                iteration=it,
                relative_change=change,
                residual=f.residual,
                dropped=dropped,
                model=f if keep else None,
                a_values=a_new if keep else None,
                b_values=b_new if keep else None,
            )
        )
        log.debug("iteration %d: relative change %.3e", it, change)
        a_c, b_c = a_new, b_new
        if change <= cfg.epsilon:
            converged = True
            break

    if both:
        d_c, _ = _fit(p.e_a, a0, b_c, cfg, len(history) + 1, f)
    else:
        d_c = f
    if not converged:
        log.warning(
            "correction stopped after %d iterations without reaching epsilon=%g",
            cfg.max_iterations,
            cfg.epsilon,
        )
    sa, sb = p.sensors
    return CorrectionResult(
        a_corrected=TimeSeries(sa, p.times, a_c),
        b_corrected=TimeSeries(sb, p.times, b_c),
        degradation=d_c,
        history=tuple(history),
        converged=converged,
        iterations_used=len(history),
        method="both" if both else "one",
    )


def correct_one(p: AlignedPair, cfg: CorrectionConfig | None = None) -> CorrectionResult:
    """Iterative correction with the ratio taken against the original ``a``.

    Each pass fits ``f`` to ``a / b_c`` over the main sensor's exposure and
    sets ``a_c = a / f(e_a)``, ``b_c = b / f(e_b)``. The last ``f`` is the
    degradation estimate.
    """
    cfg = cfg or CorrectionConfig(method="one")
    return _run(p, cfg, both=False)


def correct_both(p: AlignedPair, cfg: CorrectionConfig | None = None) -> CorrectionResult:
    """Iterative correction where both iterates are divided by the fitted ratio.

    The running ratio tends to one, so after convergence the degradation is
    refitted to ``a / b_c`` with the original ``a``.
    """
    cfg = cfg or CorrectionConfig(method="both")
    return _run(p, cfg, both=True)


def correct(p: AlignedPair, cfg: CorrectionConfig) -> CorrectionResult:
    return correct_both(p, cfg) if cfg.method == "both" else correct_one(p, cfg)


def apply_correction(
    ts: TimeSeries,
    e: ExposureSeries,
    d_c: FittedDegradationModel,
    floor: float = 1e-6,
) -> TimeSeries:
    """Divide every sample of ``ts`` by the degradation at its exposure."""
    if len(ts) != len(e) or not np.array_equal(ts.times, e.times):
        raise ConfigError("series and exposure do not share timestamps")
    d = np.asarray(d_c(e.exposures), dtype=float)
    bad = np.flatnonzero(~(d > floor))
    if bad.size:
        k = int(bad[0])
        raise DegradationUnderflowError(
            f"degradation {d[k]:.3g} <= floor {floor:g} at sample {k} "
            f"(time {ts.times[k]!r}, exposure {e.exposures[k]!r})"
        )
    return ts.with_values(ts.values / d)
