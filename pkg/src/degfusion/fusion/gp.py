"""Hyperparameter fitting, posteriors and multi-sensor fusion."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from ..core import ExposureSeries, TimeSeries
from ..errors import ConfigError, DataError, FitError, NumericalError
from . import objectives as obj
from .data import LabeledDataset, NoiseModel
from .kernels import Kernel, canonical_kernel

log = logging.getLogger(__name__)

MODES = ("exact", "sparse")
LOG_BOUND = 40.0  # |log variance| and |log lengthscale / span| limits
PREDICT_CHUNK = 4096
CONVERGENCE_PATIENCE = 3


@dataclass(frozen=True)
class GPOptions:
    """Optimizer settings shared by the exact and sparse fits.

    ``multistart`` runs one optimization per initial lengthscale in
    ``span * (0.01, 0.1, 1)`` and keeps the best; without it the single
    start is the initial kernel's lengthscale, by default the semivariogram
    estimate of ``variogram_lengthscale``. ``fixed`` names parameter
    groups held at their initial values: ``"variance"``, ``"lengthscale"``,
    ``"noise"``, ``"inducing"``.
    """

    max_iter: int = 500
    ftol: float = 1e-9
    multistart: bool = True
    fixed: tuple = ()
    exact_cap: int = 4000
    center: bool = False

    def __post_init__(self):
        fixed = tuple(self.fixed)
        bad = set(fixed) - {"variance", "lengthscale", "noise", "inducing"}
        if bad:
            raise ConfigError(f"unknown fixed parameter groups {sorted(bad)}")
        object.__setattr__(self, "fixed", fixed)
        if self.max_iter < 0:
            raise ConfigError("max_iter must be >= 0")
        if self.exact_cap < 1:
            raise ConfigError("exact_cap must be >= 1")


@dataclass(frozen=True)
class GPPosterior:
    """Fitted GP over the latent signal, immutable after construction.

    Exact posteriors keep the training data and effective noise variances.
    Sparse posteriors keep the inducing inputs and the optimal Gaussian
    ``q(u) = N(q_mean, q_cov)`` over the inducing values; training data are
    not needed to predict.
    """

    mode: str
    kernel: Kernel
    noise: NoiseModel
    objective: float
    inducing: np.ndarray | None = None
    q_mean: np.ndarray | None = None
    q_cov: np.ndarray | None = None
    train_times: np.ndarray | None = None
    train_values: np.ndarray | None = None
    train_noise: np.ndarray | None = None
    offset: float = 0.0
    jitter: float = 0.0
    trace: tuple = ()
    sensor_names: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown posterior mode {self.mode!r}")
        for name in ("inducing", "q_mean", "q_cov", "train_times", "train_values", "train_noise"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        object.__setattr__(self, "trace", tuple(float(v) for v in self.trace))
        object.__setattr__(self, "_cache", self._factorize())

    def _factorize(self):
        k = self.kernel
        if self.mode == "exact":
            K = k(self.train_times) + np.diag(self.train_noise)
            L, _ = obj.robust_cholesky(K, k.variance, what="K + D")
            alpha = cho_solve((L, True), self.train_values - self.offset)
            return {"L": L, "alpha": alpha}
        m = self.inducing.size
        Luu = cholesky(k(self.inducing) + self.jitter * np.eye(m), lower=True)
        alpha_u = cho_solve((Luu, True), self.q_mean)
        # R = Luu^-1 S Luu^-T; predictive variance is k** - |a|^2 + a'Ra, a = Luu^-1 k_u*
        R = solve_triangular(Luu, solve_triangular(Luu, self.q_cov, lower=True).T, lower=True)
        return {"Luu": Luu, "alpha_u": alpha_u, "R": 0.5 * (R + R.T)}

    @property
    def m(self) -> int | None:
        return None if self.inducing is None else int(self.inducing.size)

    def predict(self, query_times):
        """Posterior mean and marginal variance of the latent signal."""
        q = np.asarray(query_times, dtype=float).reshape(-1)
        if not np.all(np.isfinite(q)):
            raise DataError("query times must be finite")
        mean = np.empty(q.size)
        var = np.empty(q.size)
        c = self._cache
        for lo in range(0, q.size, PREDICT_CHUNK):
            sl = slice(lo, lo + PREDICT_CHUNK)
            if self.mode == "exact":
                Ks = self.kernel(self.train_times, q[sl])
                mean[sl] = Ks.T @ c["alpha"]
                a = solve_triangular(c["L"], Ks, lower=True)
                var[sl] = self.kernel.variance - np.einsum("ij,ij->j", a, a)
            else:
                Ks = self.kernel(self.inducing, q[sl])
                mean[sl] = Ks.T @ c["alpha_u"]
                a = solve_triangular(c["Luu"], Ks, lower=True)
                var[sl] = (
                    self.kernel.variance
                    - np.einsum("ij,ij->j", a, a)
                    + np.einsum("ij,ij->j", a, c["R"] @ a)
                )
        return mean + self.offset, np.maximum(var, 0.0)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "kernel": self.kernel.to_dict(),
            "noise": self.noise.to_dict(),
            "objective": self.objective,
            "objective_name": "log_marginal_likelihood" if self.mode == "exact" else "elbo",
            "offset": self.offset,
            "jitter": self.jitter,
            "trace": list(self.trace),
            "sensor_names": list(self.sensor_names),
        }
        if self.mode == "sparse":
            d["inducing"] = self.inducing.tolist()
            d["q_mean"] = self.q_mean.tolist()
            d["q_cov"] = self.q_cov.tolist()
        else:
            d["train_times"] = self.train_times.tolist()
            d["train_values"] = self.train_values.tolist()
            d["train_noise"] = self.train_noise.tolist()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "GPPosterior":
        return cls(
            mode=d["mode"],
            kernel=Kernel.from_dict(d["kernel"]),
            noise=NoiseModel.from_dict(d["noise"]),
            objective=float(d["objective"]),
            inducing=d.get("inducing"),
            q_mean=d.get("q_mean"),
            q_cov=d.get("q_cov"),
            train_times=d.get("train_times"),
            train_values=d.get("train_values"),
            train_noise=d.get("train_noise"),
            offset=float(d.get("offset", 0.0)),
            jitter=float(d.get("jitter", 0.0)),
            trace=tuple(d.get("trace", ())),
            sensor_names=tuple(d.get("sensor_names", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "GPPosterior":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# optimization


class _Objective:
    """Negated objective over the free parameters, with an iterate trace."""

    def __init__(self, fn, x_full, free):
        self.fn, self.x_full, self.free = fn, np.asarray(x_full, float), free
        self.cache = {}
        self.trace = []
        self.ftol, self.patience = 0.0, 1
        self.scale = 1.0

    def full(self, x):
        out = self.x_full.copy()
        out[self.free] = x
        return out

    def __call__(self, x):
        key = x.tobytes()
        if key not in self.cache:
            try:
                value, grad = self.fn(self.full(x))
            except NumericalError:
                value, grad = -np.inf, np.zeros(self.x_full.size)
            if not np.isfinite(value):
                # reject the step; L-BFGS-B backtracks on +inf
                self.cache = {key: (np.inf, np.zeros(x.size))}
                return self.cache[key]
            self.cache = {key: (-value * self.scale, -grad[self.free] * self.scale)}
        return self.cache[key]

    def record(self, x):
        self.trace.append(-self(x)[0] / self.scale)
        tr = self.trace
        if len(tr) > self.patience:
            recent = np.abs(np.diff(tr[-self.patience - 1 :]))
            if np.all(recent <= self.ftol * np.maximum(np.abs(tr[-self.patience :]), 1.0)):
                raise StopIteration


def _optimize(fn, x0, free, bounds, opts: GPOptions):
    """Maximize ``fn`` (returning value and full gradient) from ``x0``.

    L-BFGS-B with its own line search; stops when the relative objective
    change stays below ``opts.ftol`` for ``CONVERGENCE_PATIENCE``
    consecutive iterations, or after ``opts.max_iter`` iterations.
    """
    target = _Objective(fn, x0, free)
    # a single tiny step is common early on (poorly scaled first L-BFGS
    # step), so convergence needs several consecutive small changes
    target.ftol, target.patience = opts.ftol, CONVERGENCE_PATIENCE
    start = np.asarray(x0, float)[free]
    f0 = target(start)[0]
    if not np.isfinite(f0):
        raise FitError("objective is not finite at the initial parameters", best_params=x0)
    # The first L-BFGS-B step is a Cauchy step with an identity Hessian, so
    # an O(n) gradient throws it straight to the box bounds. Normalizing the
    # objective to O(1) keeps that step on the scale of the parameters.
    target.scale = 1.0 / max(abs(f0), 1.0)
    target.cache = {}
    f0 = target(start)[0]
    target.record(start)
    if opts.max_iter == 0 or start.size == 0:
        return target.full(start), -f0 / target.scale, target.trace
    res = minimize(
        target,
        start,
        jac=True,
        method="L-BFGS-B",
        bounds=[bounds[i] for i in np.flatnonzero(free)],
        callback=target.record,
        options={"maxiter": opts.max_iter, "ftol": 0.0, "gtol": 1e-12, "maxls": 50},
    )
    x = res.x
    log.debug("L-BFGS-B: %s after %d iterations", res.message, res.nit)
    f = target(x)[0]
    if not np.isfinite(f):
        raise FitError(
            f"optimizer diverged: {res.message}", best_params=target.full(start),
            residual=-f0 / target.scale,
        )
    if f > f0:  # never return something worse than the start
        x, f = start, f0
    return target.full(x), -f / target.scale, target.trace


def _free_mask(n_sens: int, m: int, fixed) -> np.ndarray:
    free = np.ones(2 + n_sens + m, dtype=bool)
    if "variance" in fixed:
        free[0] = False
    if "lengthscale" in fixed:
        free[1] = False
    if "noise" in fixed:
        free[2 : 2 + n_sens] = False
    if "inducing" in fixed:
        free[2 + n_sens :] = False
    return free


def _bounds(span: float, n_sens: int, m: int):
    ls = np.log(max(span, 1e-12))
    b = [(-LOG_BOUND, LOG_BOUND), (ls - LOG_BOUND / 2, ls + LOG_BOUND / 2)]
    b += [(-LOG_BOUND, LOG_BOUND)] * n_sens
    b += [(-1.0, 2.0)] * m  # inducing inputs in units of the data span
    return b


def default_noise(data: LabeledDataset) -> NoiseModel:
    """Per-sensor noise guess: half the variance of successive differences."""
    out = {}
    scale = float(np.mean(data.values**2)) or 1.0
    for k, name in enumerate(data.sensor_names):
        y = data.values[data.codes == k]
        v = 0.5 * np.var(np.diff(y)) if y.size > 2 else 0.0
        out[name] = max(v, 1e-6 * scale)
    return NoiseModel(out)


def variogram_lengthscale(data: LabeledDataset, family: str = "matern12",
                          variance: float | None = None) -> float:
    """Lengthscale matching the empirical semivariogram at lag ~ span/100.

    For small lags the Matern-1/2 semivariogram is ``s2 r / l`` and the RBF
    one ``s2 r^2 / (2 l^2)``; the nugget (noise) is removed first. The
    densest sensor is used. Falls back to ``span / 10`` when the data carry
    no usable increments.
    """
    span = float(np.ptp(data.times)) or 1.0
    s2 = float(np.mean(data.values**2)) if variance is None else float(variance)
    counts = np.bincount(data.codes)
    k = int(np.argmax(counts))
    t, y = data.times[data.codes == k], data.values[data.codes == k]
    if t.size < 4:
        return 0.1 * span
    nugget = 0.5 * np.var(np.diff(y))
    step = max(1, min(int(np.searchsorted(t, t[0] + span / 100.0)), t.size // 2))
    lag = float(np.mean(t[step:] - t[:-step]))
    gamma = 0.5 * float(np.mean((y[step:] - y[:-step]) ** 2)) - nugget
    if not (gamma > 0 and lag > 0 and s2 > 0):
        return 0.1 * span
    if canonical_kernel(family) == "matern12":
        ell = s2 * lag / gamma
    else:
        ell = lag * np.sqrt(s2 / (2.0 * gamma))
    return float(np.clip(ell, np.min(np.diff(t)), 1e4 * span))


def default_kernel(data: LabeledDataset, family: str = "matern12", lengthscale=None) -> Kernel:
    """Variance ``mean(y^2)`` (the prior mean is zero) and a variogram lengthscale."""
    s2 = float(np.mean(data.values**2)) or 1.0
    return Kernel(family, s2, lengthscale or variogram_lengthscale(data, family, s2))


def _prepare(data: LabeledDataset, init, noise_init, opts: GPOptions, family: str):
    if opts.center:
        offset = float(np.mean(data.values))
        data = LabeledDataset(data.times, data.values - offset, data.sensors)
    else:
        offset = 0.0
    if isinstance(init, GPPosterior):
        noise_init = noise_init or NoiseModel(init.noise.variances)
        init = init.kernel
    kernel = init if isinstance(init, Kernel) else default_kernel(data, family)
    noise = noise_init or default_noise(data)
    return data, offset, kernel, noise


def _starts(kernel: Kernel, span: float, opts: GPOptions, warm: bool):
    if warm or not opts.multistart or "lengthscale" in opts.fixed:
        return [kernel.lengthscale]
    return [span / 100.0, span / 10.0, span]


def exact_gp_fit(
    data: LabeledDataset,
    init: Kernel | GPPosterior | None = None,
    noise_init: NoiseModel | None = None,
    opts: GPOptions | None = None,
    family: str = "matern12",
) -> GPPosterior:
    """Maximize the exact log marginal likelihood over kernel and noise.

    The returned posterior's objective is never below the objective at
    the (best) initial point; ``trace`` holds the objective after every
    optimizer iteration of the winning start.
    """
    opts = opts or GPOptions()
    n = len(data)
    if n > opts.exact_cap:
        raise ConfigError(
            f"exact GP on n={n} observations exceeds the cap of {opts.exact_cap}; "
            "use svgp_fit (sparse mode) instead"
        )
    warm = isinstance(init, (Kernel, GPPosterior))
    data_c, offset, kernel, noise = _prepare(data, init, noise_init, opts, canonical_kernel(family))
    mult = noise.multipliers_for(data_c)
    S = len(data_c.sensor_names)
    span = float(np.ptp(data_c.times)) or 1.0
    free = _free_mask(S, 0, opts.fixed)
    bounds = _bounds(span, S, 0)
    fam = kernel.family

    def fn(theta):
        return obj.lml_and_grad(theta, data_c, fam, mult)

    best = None
    for ell in _starts(kernel, span, opts, warm):
        x0 = obj.pack(kernel.with_params(lengthscale=ell), noise, data_c)
        try:
            x, f, trace = _optimize(fn, x0, free, bounds, opts)
        except (FitError, NumericalError) as exc:
            log.info("exact fit start l=%g failed: %s", ell, exc)
            continue
        if best is None or f > best[1]:
            best = (x, f, trace)
    if best is None:
        raise FitError("exact GP fit failed from every starting point")
    x, f, trace = best
    kern, nv = obj.unpack(x, fam, S)
    fitted_noise = noise.with_variances(data_c.sensor_names, nv)
    return GPPosterior(
        mode="exact",
        kernel=kern,
        noise=fitted_noise,
        objective=f,
        train_times=data_c.times,
        train_values=data_c.values + offset,
        train_noise=fitted_noise.effective(data_c),
        offset=offset,
        trace=trace,
        sensor_names=data_c.sensor_names,
    )


def initial_inducing(times, m: int) -> np.ndarray:
    """``m`` quantiles of the distinct training times."""
    u = np.unique(np.asarray(times, dtype=float))
    return np.quantile(u, np.linspace(0.0, 1.0, m))


def svgp_fit(
    data: LabeledDataset,
    m: int,
    init: Kernel | GPPosterior | None = None,
    noise_init: NoiseModel | None = None,
    opts: GPOptions | None = None,
    family: str = "matern12",
    inducing_init=None,
) -> GPPosterior:
    """Maximize the collapsed bound over kernel, noise and inducing inputs.

    Passing a fitted posterior as ``init`` warm-starts kernel and noise
    from it (and skips multi-start); this is how an m-sweep reuses a
    cheap small-m fit for larger m.
    """
    opts = opts or GPOptions()
    n = len(data)
    if not 1 <= int(m) <= n:
        raise ConfigError(f"inducing count m must lie in [1, {n}], got {m}")
    m = int(m)
    warm = isinstance(init, (Kernel, GPPosterior))
    data_c, offset, kernel, noise = _prepare(data, init, noise_init, opts, canonical_kernel(family))
    mult = noise.multipliers_for(data_c)
    S = len(data_c.sensor_names)
    t0 = float(data_c.times[0])
    span = float(np.ptp(data_c.times)) or 1.0
    z0 = initial_inducing(data_c.times, m) if inducing_init is None else np.asarray(inducing_init, float)
    if z0.size != m:
        raise ConfigError(f"inducing_init has {z0.size} points, expected {m}")
    free = _free_mask(S, m, opts.fixed)
    bounds = _bounds(span, S, m)
    fam = kernel.family

    def fn(x):
        z = t0 + span * x[2 + S :]
        value, g, g_z = obj.elbo_and_grad(x[: 2 + S], z, data_c, fam, mult)
        return value, np.concatenate([g, span * g_z])

    best = None
    for ell in _starts(kernel, span, opts, warm):
        x0 = np.concatenate(
            [obj.pack(kernel.with_params(lengthscale=ell), noise, data_c), (z0 - t0) / span]
        )
        try:
            x, f, trace = _optimize(fn, x0, free, bounds, opts)
        except (FitError, NumericalError) as exc:
            log.info("sparse fit start l=%g failed: %s", ell, exc)
            continue
        if best is None or f > best[1]:
            best = (x, f, trace)
    if best is None:
        raise FitError("sparse GP fit failed from every starting point")
    x, f, trace = best
    kern, nv = obj.unpack(x[: 2 + S], fam, S)
    z = t0 + span * x[2 + S :]
    fitted_noise = noise.with_variances(data_c.sensor_names, nv)
    d = fitted_noise.effective(data_c)
    value, _, (Luu, LB, c, jitter) = obj._elbo(data_c, kern, d, z, grad=False)
    # q(u): mean Kuu P^-1 Kuf D^-1 y = Luu LB^-T c, covariance Kuu P^-1 Kuu = Luu B^-1 Luu'
    q_mean = Luu @ solve_triangular(LB, c, lower=True, trans="T")
    W = solve_triangular(LB, Luu.T, lower=True)
    q_cov = W.T @ W
    return GPPosterior(
        mode="sparse",
        kernel=kern,
        noise=fitted_noise,
        objective=value,
        inducing=z,
        q_mean=q_mean,
        q_cov=q_cov,
        offset=offset,
        jitter=jitter,
        trace=trace,
        sensor_names=data_c.sensor_names,
    )


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class FusionConfig:
    """How corrected series are fused.

    ``degradation_scaling`` multiplies each observation's noise variance by
    ``1 / d(e)**2`` using the learned degradation, since dividing by ``d``
    amplifies the measurement noise by the same factor.
    """

    mode: str = "sparse"
    m: int = 100
    kernel: str = "matern12"
    degradation_scaling: bool = False
    options: GPOptions = field(default_factory=GPOptions)

    def __post_init__(self):
        mode = str(self.mode).lower()
        if mode not in MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "kernel", canonical_kernel(self.kernel))
        if int(self.m) < 1:
            raise ConfigError("m must be >= 1")
        object.__setattr__(self, "m", int(self.m))
        if isinstance(self.options, dict):
            object.__setattr__(self, "options", GPOptions(**self.options))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"]["fixed"] = list(self.options.fixed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fusion config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("options"), dict):
            o = dict(d["options"])
            bad = set(o) - set(GPOptions.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown fusion option keys: {sorted(bad)}")
            d["options"] = GPOptions(**o)
        return cls(**d)


def degradation_multipliers(series, exposures, degradation) -> list:
    """Per-observation ``1 / d(e)**2`` for each series."""
    out = []
    for s in series:
        e = exposures.get(s.sensor) if exposures else None
        if e is None:
            raise ConfigError(f"degradation scaling needs the exposure of sensor {s.sensor!r}")
        if not isinstance(e, ExposureSeries) or not np.array_equal(e.times, s.times):
            raise ConfigError(f"exposure of {s.sensor!r} does not match its series timestamps")
        d = np.asarray(degradation(e.exposures), dtype=float)
        if np.any(~(d > 0)):
            raise NumericalError(f"degradation is not positive over the exposure of {s.sensor!r}")
        out.append(1.0 / d**2)
    return out


def fuse(
    *series: TimeSeries,
    cfg: FusionConfig | None = None,
    degradation=None,
    exposures: dict | None = None,
    init=None,
    noise_init: NoiseModel | None = None,
) -> GPPosterior:
    """Fuse corrected series from one or more sensors into a GP posterior."""
    cfg = cfg or FusionConfig()
    data = LabeledDataset.from_series(*series)
    noise = noise_init
    if cfg.degradation_scaling:
        if degradation is None:
            raise ConfigError("degradation scaling is enabled but no degradation model was given")
        mult = np.concatenate(degradation_multipliers(series, exposures, degradation))[data.order]
        if noise is not None:
            base = noise.variances
        elif isinstance(init, GPPosterior):
            base = init.noise.variances
        else:
            base = default_noise(data).variances
        noise = NoiseModel(base, mult)
    if cfg.mode == "exact":
        return exact_gp_fit(data, init, noise, cfg.options, family=cfg.kernel)
    return svgp_fit(data, min(cfg.m, len(data)), init, noise, cfg.options, family=cfg.kernel)


def prediction_table(posterior: GPPosterior, query_times) -> np.ndarray:
    """Columns ``time, mean, variance, lower95, upper95``."""
    t = np.asarray(query_times, dtype=float).reshape(-1)
    mean, var = posterior.predict(t)
    half = 1.959963984540054 * np.sqrt(var)
    return np.column_stack([t, mean, var, mean - half, mean + half])
