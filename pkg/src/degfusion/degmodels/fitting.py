"""Fitting of the four degradation-ratio families."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.optimize import least_squares

from ..errors import DataError, FitError
from .isotonic import merge_duplicates, pava_decreasing
from .models import FitSpec, FittedDegradationModel, exp_family
from .qp import solve_qp

log = logging.getLogger(__name__)


def _check_xy(x, y, min_len):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise DataError(f"x and y differ in length ({x.size} vs {y.size})")
    if x.size < min_len:
        raise DataError(f"need at least {min_len} points to fit, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("fit inputs contain non-finite values")
    if np.any(x < 0):
        raise DataError("exposures must be non-negative")
    return x, y


# ---------------------------------------------------------------- parametric


def _exp_residual_and_jac(x, y, with_lin):
    def unpack(p):
        t1 = np.exp(p[0])
        return t1, p[1], (p[2] if with_lin else 0.0)

    def resid(p):
        return exp_family(x, *unpack(p)) - y

    def jac(p):
        t1, t2, _ = unpack(p)
        big = np.exp(t1 * t2)
        em1 = np.expm1(-t1 * x)
        d_t1 = t2 * big * em1 - x * big * np.exp(-t1 * x)
        cols = [t1 * d_t1, t1 * big * em1]
        if with_lin:
            cols.append(x)
        return np.column_stack(cols)

    return resid, jac


def _fit_exponential(x, y, spec: FitSpec, with_lin: bool) -> FittedDegradationModel:
    x, y = _check_xy(x, y, 3)
    family = "explin" if with_lin else "exp"
    resid, jac = _exp_residual_and_jac(x, y, with_lin)
    starts = [
        (t1, t2) for t1 in (0.1, 1.0, 10.0) for t2 in (0.0, float(np.median(x)))
    ]
    best, best_cost, any_ok = None, np.inf, False
    for t1, t2 in starts:
        p0 = [np.log(t1), t2] + ([0.0] if with_lin else [])
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                res = least_squares(
                    resid,
                    p0,
                    jac=jac,
                    method="lm",
                    xtol=1e-15,
                    ftol=1e-15,
                    gtol=1e-15,
                    max_nfev=100 * spec.max_iter,
                )
            except ValueError:
                continue
        if not np.isfinite(res.cost):
            continue
        any_ok |= res.status > 0
        if res.cost < best_cost:
            best, best_cost = res, res.cost
    if best is None:
        raise FitError(f"{family} fit failed from every start")
    theta = [float(np.exp(best.x[0])), float(best.x[1])] + (
        [float(best.x[2])] if with_lin else []
    )
    residual = float(np.sqrt(2.0 * best_cost))
    if not any_ok:
        raise FitError(
            f"{family} fit did not converge in {100 * spec.max_iter} evaluations",
            best_params=theta,
            residual=residual,
        )
    return FittedDegradationModel(
        family,
        params=tuple(theta),
        unit_at_zero=True,
        residual=residual,
        spec=spec.to_dict(),
        diagnostics={"n_clipped": int(np.sum(y > 1.0))},
    )


def fit_exp(x, y, spec: FitSpec | None = None) -> FittedDegradationModel:
    """Least-squares fit of ``f(x) = 1 - e^{t1 t2} + e^{-t1 (x - t2)}`` with ``t1 > 0``.

    ``t1`` is optimized in log space so positivity holds by construction.
    Levenberg-Marquardt is restarted from six initial points and the lowest
    residual wins.
    """
    return _fit_exponential(x, y, spec or FitSpec(family="exp"), with_lin=False)


def fit_explin(x, y, spec: FitSpec | None = None) -> FittedDegradationModel:
    """As :func:`fit_exp` with an extra linear term ``t3 * x``."""
    return _fit_exponential(x, y, spec or FitSpec(family="explin"), with_lin=True)


# ------------------------------------------------------------- knot families


def monotone_rows(n: int) -> np.ndarray:
    """Rows of ``theta_i - theta_{i+1} >= 0``."""
    A = np.zeros((max(n - 1, 0), n))
    idx = np.arange(n - 1)
    A[idx, idx] = 1.0
    A[idx, idx + 1] = -1.0
    return A


def convexity_rows(x) -> np.ndarray:
    """Divided-difference convexity rows, scaled to ``[1, -2, 1]`` on a uniform grid."""
    x = np.asarray(x, dtype=float)
    n = x.size
    A = np.zeros((max(n - 2, 0), n))
    for r, i in enumerate(range(1, n - 1)):
        hl, hr = x[i] - x[i - 1], x[i + 1] - x[i]
        s = 0.5 * (hl + hr)
        A[r, i - 1] = s / hl
        A[r, i] = -s / hl - s / hr
        A[r, i + 1] = s / hr
    return A


def _prepare_knots(x, y, unit):
    xu, yu, w = merge_duplicates(x, y)
    virtual = unit and xu[0] > 0.0
    if virtual:
        xu = np.concatenate([[0.0], xu])
        yu = np.concatenate([[1.0], yu])
        w = np.concatenate([[1.0], w])
    return xu, yu, w, virtual


def _shape_qp(xk, y, H, c, unit, convex, starts=()):
    """Solve the shape constrained QP on knots ``xk``.

    ``starts`` are candidate initial points tried in order; the first
    feasible one is used, seeded with its active inequality rows.
    """
    n = xk.size
    A_in = monotone_rows(n)
    if convex and n >= 3:
        A_in = np.vstack([A_in, convexity_rows(xk)])
    if unit:
        A_eq, b_eq = np.eye(1, n), np.array([1.0])
    else:
        A_eq, b_eq = None, None
    b_in = np.zeros(A_in.shape[0])

    working = None
    x0 = None
    for s in starts:
        if s is None or np.size(s) != n:
            continue
        s = np.array(s, dtype=float)
        if unit:
            s[0] = 1.0
        slack = A_in @ s
        if np.all(slack >= -1e-13):
            x0 = s
            working = np.flatnonzero(np.abs(slack) <= 1e-13)
            break
    if x0 is None:
        # strictly decreasing, strictly convex start: no inequality is active
        level = 1.0 if unit else float(np.max(y))
        span = max(xk[-1] - xk[0], 1e-300)
        x0 = level + 1e-3 * max(abs(level), 1.0) * np.expm1(-(xk - xk[0]) / span)
        working = None
    res = solve_qp(H, c, A_eq, b_eq, A_in, b_in, x0=x0, working=working)
    return res


def fit_isotonic(x, y, spec: FitSpec | None = None) -> FittedDegradationModel:
    """Non-increasing least-squares step fit, optionally pinned and convex.

    Monotonicity alone is solved exactly by pool-adjacent-violators; adding
    ``theta(0) = 1`` clips that solution at one (exact for a bound on an
    isotonic fit). Convexity switches to the active-set QP, which is dense in
    the number of unique abscissae.
    """
    spec = spec or FitSpec(family="isotonic")
    x, y = _check_xy(x, y, 2)
    unit = spec.enforce_unit_at_zero
    xk, yk, w, virtual = _prepare_knots(x, y, unit)
    n = xk.size

    if not spec.enforce_convexity:
        if unit:
            theta = np.empty(n)
            theta[0] = 1.0
            theta[1:] = np.minimum(pava_decreasing(yk[1:], w[1:]), 1.0)
        else:
            theta = pava_decreasing(yk, w)
        qp_iter = 0
    else:
        wq = w.copy()
        H = 2.0 * np.diag(wq)
        c = -2.0 * wq * yk
        res = _shape_qp(xk, yk, H, c, unit, True)
        theta, qp_iter = res.x, res.iterations
        if unit:
            theta[0] = 1.0

    data = slice(1, None) if virtual else slice(None)
    model = FittedDegradationModel(
        "isotonic",
        knots_x=xk,
        knots_y=theta,
        unit_at_zero=unit,
        convex=spec.enforce_convexity,
        residual=float(np.sqrt(np.sum(w[data] * (theta[data] - yk[data]) ** 2))),
        spec=spec.to_dict(),
        diagnostics={
            "n_clipped": int(np.sum(y > 1.0)) if unit else 0,
            "virtual_knot": bool(virtual),
            "qp_iterations": int(qp_iter),
        },
    )
    return model


def smooth_qp_matrices(y, lam, w=None):
    """Quadratic form of ``sum w (theta - y)^2 + sum lam_i (theta_{i+1} - theta_i)^2``."""
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (max(n - 1, 0),))
    D = -monotone_rows(n)
    H = 2.0 * (np.diag(w) + D.T @ (lam[:, None] * D))
    c = -2.0 * w * y
    return H, c


def fit_smooth_monotonic(
    x, y, spec: FitSpec | None = None, warm_start: FittedDegradationModel | None = None
) -> FittedDegradationModel:
    """Smoothed monotone fit via isotonic stabilization and downsampling.

    1. isotonic fit of ``(x, y)`` (monotone and, if requested, pinned at 1);
    2. that fit is sampled at ``m`` exposure-uniform abscissae over the data
       range; when pinned at 1 the grid starts at 0 instead (``m + 1``
       points, same spacing rule) so the first gap is not shorter than the
       rest, which would bias the fit just above zero;
    3. the smoothed problem with adjacent-difference penalty ``lam`` and all
       requested shape constraints is solved on the samples.

    ``warm_start`` is a previous fit on the same exposures; when its knots
    match, its ordinates seed the QP (iterative correction refits the same
    grid many times).
    """
    spec = spec or FitSpec(family="smooth")
    x, y = _check_xy(x, y, 2)
    unit = spec.enforce_unit_at_zero
    iso = fit_isotonic(
        x, y, FitSpec(family="isotonic", enforce_unit_at_zero=unit, m=spec.m)
    )
    n_data = np.unique(x).size
    m = spec.m
    if m >= n_data:
        warnings.warn(
            f"downsample count m={m} is not below the number of unique "
            f"exposures ({n_data}); using m={n_data}",
            stacklevel=2,
        )
        m = n_data
    lo, hi = float(x.min()), float(x.max())
    if unit and lo > 0.0:
        grid = np.linspace(0.0, hi, m + 1)
    else:
        grid = np.linspace(lo, hi, m) if hi > lo else np.array([lo])
    yr = iso(grid)

    lam = spec.lam
    if isinstance(lam, tuple) and len(lam) != grid.size - 1:
        raise DataError(
            f"lam has {len(lam)} entries but the downsampled grid has {grid.size - 1} gaps"
        )
    if grid.size == 1:
        theta = np.array([1.0 if unit else yr[0]])
        qp_obj, qp_iter = 0.0, 0
    else:
        H, c = smooth_qp_matrices(yr, lam)
        starts = [yr]
        if (
            warm_start is not None
            and warm_start.knots_x is not None
            and np.array_equal(warm_start.knots_x, grid)
        ):
            starts.insert(0, warm_start.knots_y)
        res = _shape_qp(grid, yr, H, c, unit, spec.enforce_convexity, starts=starts)
        theta, qp_iter = res.x, res.iterations
        if unit:
            theta[0] = 1.0
        qp_obj = float(res.objective + yr @ yr)

    model = FittedDegradationModel(
        "smooth",
        knots_x=grid,
        knots_y=theta,
        unit_at_zero=unit,
        convex=spec.enforce_convexity,
        spec=spec.to_dict(),
    )
    fitted = model(x)
    return FittedDegradationModel(
        "smooth",
        knots_x=grid,
        knots_y=theta,
        unit_at_zero=unit,
        convex=spec.enforce_convexity,
        residual=float(np.linalg.norm(fitted - y)),
        spec=spec.to_dict(),
        diagnostics={
            "n_clipped": int(np.sum(y > 1.0)) if unit else 0,
            "qp_objective": qp_obj,
            "qp_iterations": int(qp_iter),
            "m_used": int(m),
        },
    )


_FITTERS = {
    "exp": fit_exp,
    "explin": fit_explin,
    "isotonic": fit_isotonic,
    "smooth": fit_smooth_monotonic,
}


def fit_curve(x, y, spec: FitSpec | None = None, warm_start=None) -> FittedDegradationModel:
    """Fit ``y ~ f(x)`` with the family named in ``spec``."""
    spec = spec or FitSpec()
    if spec.family == "smooth":
        return fit_smooth_monotonic(x, y, spec, warm_start=warm_start)
    return _FITTERS[spec.family](x, y, spec)
