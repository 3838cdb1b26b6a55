"""Exact log marginal likelihood and collapsed sparse bound, with gradients.

Both objectives take hyperparameters in log space::

    theta = [log s2, log l, log noise_1, ..., log noise_S]

where ``noise_k`` is the variance of the k-th sensor in
``LabeledDataset.sensor_names`` order. The sparse bound additionally
depends on the inducing inputs ``z``.

The sparse bound is evaluated through ``B = I + A A'`` with
``A = Luu^-1 Kuf D^-1/2`` so no n x n matrix is formed; the cost is
O(n m^2) time and O(n m) memory.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from ..errors import NumericalError
from .data import LabeledDataset, NoiseModel
from .kernels import Kernel

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER_START = 1e-10
JITTER_STOP = 1e-4
# squared Cholesky pivots below this (relative to the signal variance) lose
# more than half the working digits in the inverse factor
PIVOT_FLOOR = float(np.sqrt(np.finfo(float).eps))


def robust_cholesky(M, scale: float, start: float = JITTER_START, what: str = "matrix"):
    """Lower Cholesky factor of ``M + j I`` with the smallest working jitter.

    ``j`` is 0 first, then ``start * scale`` growing tenfold up to
    ``JITTER_STOP * scale``. A factorization whose smallest squared pivot
    falls below ``PIVOT_FLOOR * scale`` counts as failed: it completes, but
    its inverse is dominated by rounding. Returns ``(L, j)``.
    """
    if not np.all(np.isfinite(M)):
        raise NumericalError(f"{what} has non-finite entries; check hyperparameters and data")
    jitter = 0.0
    rel = start
    n = M.shape[0]
    while True:
        try:
            L = cholesky(M + jitter * np.eye(n), lower=True, check_finite=False)
            if np.min(np.diag(L)) ** 2 < PIVOT_FLOOR * scale:
                raise np.linalg.LinAlgError("pivot below the jitter floor")
            return L, jitter
        except np.linalg.LinAlgError:
            if rel > JITTER_STOP * (1 + 1e-9):
                raise NumericalError(
                    f"{what} is not positive definite even with jitter "
                    f"{JITTER_STOP:g} x signal variance; increase the noise floor, "
                    "spread the inducing points, or shorten the lengthscale"
                ) from None
            jitter = rel * scale
            rel *= 10.0


def unpack(theta, family: str, n_sensors: int):
    theta = np.asarray(theta, dtype=float)
    kern = Kernel(family, np.exp(theta[0]), np.exp(theta[1]))
    return kern, np.exp(theta[2 : 2 + n_sensors])


def pack(kernel: Kernel, noise: NoiseModel, data: LabeledDataset) -> np.ndarray:
    return np.concatenate(
        [[np.log(kernel.variance), np.log(kernel.lengthscale)], noise.log_variances(data)]
    )


# ---------------------------------------------------------------------------
# exact


def _lml(data: LabeledDataset, kernel: Kernel, d: np.ndarray, grad: bool):
    t, y = data.times, data.values
    n = t.size
    if grad:
        K, dK_l, _ = kernel.gram_and_derivatives(t, t)
    else:
        K = kernel(t)
    L, _ = robust_cholesky(K + np.diag(d), kernel.variance, what="K + D")
    alpha = cho_solve((L, True), y, check_finite=False)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    if not grad:
        return float(value), None
    # d LML = 1/2 tr((alpha alpha' - (K+D)^-1) dK)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    g_var = 0.5 * np.sum(W * K)
    g_len = 0.5 * np.sum(W * dK_l)
    g_noise = 0.5 * np.bincount(data.codes, weights=np.diag(W) * d, minlength=len(data.sensor_names))
    return float(value), np.concatenate([[g_var, g_len], g_noise])


def log_marginal_likelihood(data: LabeledDataset, kernel: Kernel, noise: NoiseModel) -> float:
    """``log N(y | 0, K + D)`` by Cholesky factorization."""
    return _lml(data, kernel, noise.effective(data), grad=False)[0]


def lml_and_grad(theta, data: LabeledDataset, family: str, multipliers):
    kern, nv = unpack(theta, family, len(data.sensor_names))
    d = nv[data.codes] * multipliers
    return _lml(data, kern, d, grad=True)


# ---------------------------------------------------------------------------
# sparse


def _elbo(data: LabeledDataset, kernel: Kernel, d: np.ndarray, z: np.ndarray, grad: bool):
    t, y = data.times, data.values
    n, m = t.size, z.size
    I = np.eye(m)
    r = z[:, None] - t[None, :]
    Kuf = kernel.variance * kernel._shape(r)
    Kuu = kernel(z)
    Luu, jitter = robust_cholesky(Kuu, kernel.variance, what="K_uu")
    Kuu = Kuu + jitter * I
    # explicit m x m inverse factor: the O(n m^2) steps become one
    # symmetric rank-n update and (for the gradient) one matrix product
    Li = solve_triangular(Luu, I, lower=True, check_finite=False)

    w = y / d
    Ks = Kuf / np.sqrt(d)
    # A first, then A A': forming Kuf D^-1 Kfu before applying Li would
    # square the cancellation when the kernel is nearly flat across the data
    A = Li @ Ks
    AAt = A @ A.T
    B = I + 0.5 * (AAt + AAt.T)
    try:
        LB = cholesky(B, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError("I + A A' lost positive definiteness; noise variance too small") from None
    c = solve_triangular(LB, Li @ (Kuf @ w), lower=True, check_finite=False)

    # P = Kuu + Kuf D^-1 Kfu = Luu B Luu';  v = P^-1 Kuf w
    v = Li.T @ solve_triangular(LB, c, lower=True, trans="T", check_finite=False)
    Kfv = Kuf.T @ v
    kdiag = kernel.diag(t)
    logdet = np.sum(np.log(d)) + 2.0 * np.sum(np.log(np.diag(LB)))
    # y'(Q+D)^-1 y written as min_a |y - Kfu a|^2_D^-1 + a'Kuu a at a = v.
    # The difference form y'D^-1 y - c'c cancels catastrophically for
    # uncentered data; this form is a sum of positive terms and stationary
    # in v, so rounding in v enters only at second order.
    resid = y - Kfv
    quad = resid @ (resid / d) + v @ (Kuu @ v)
    # tr(D^-1 Q) = tr(Kuu^-1 Kuf D^-1 Kfu) = tr(A A')
    trace = np.sum(kdiag / d) - np.trace(AAt)
    value = -0.5 * (logdet + quad + n * LOG_2PI + trace)
    if not np.isfinite(value):
        raise NumericalError("collapsed bound is not finite")
    if not grad:
        return float(value), None, (Luu, LB, c, jitter)

    Binv = cho_solve((LB, True), I, check_finite=False)
    # gradient w.r.t. the symmetric Kuu: -1/2 v v' + 1/2 Luu^-T (2I - B - B^-1) Luu^-1
    G_K = 0.5 * Li.T @ (2.0 * I - B - Binv) @ Li
    G_K = 0.5 * (G_K + G_K.T) - 0.5 * np.outer(v, v)
    # M = P^-1 - Kuu^-1, so diag(Kfu M Kuf) = diag(Kfu P^-1 Kuf) - diag(Q)
    M = Li.T @ (Binv - I) @ Li
    MK = M @ Kuf
    s_minus_q = np.einsum("ij,ij->j", Kuf, MK)
    # gradient w.r.t. Kuf, times Kuf elementwise (every kernel derivative
    # is Kuf times a factor)
    H = np.outer(v, w - Kfv / d)
    H -= MK / d
    H *= Kuf
    del MK, Ks, A

    g_d = (0.5 * resid**2 + 0.5 * (kdiag + s_minus_q)) / d**2 - 0.5 / d

    fl_uu, ft_uu = kernel.derivative_factors(z[:, None] - z[None, :])
    GKK = G_K * (Kuu - jitter * I)
    g_var = np.sum(G_K * Kuu) + np.sum(H) - 0.5 * np.sum(kdiag / d)
    fl, ft = kernel.derivative_factors(r)
    g_len = np.sum(GKK * fl_uu) + np.einsum("ij,ij->", H, fl)
    g_z = 2.0 * np.sum(GKK * ft_uu, axis=1) + np.einsum("ij,ij->i", H, ft)
    g_noise = np.bincount(data.codes, weights=g_d * d, minlength=len(data.sensor_names))
    g = np.concatenate([[g_var, g_len], g_noise])
    return float(value), (g, g_z), (Luu, LB, c, jitter)


def svgp_elbo(data: LabeledDataset, kernel: Kernel, noise: NoiseModel, u) -> float:
    """Collapsed variational lower bound with a heteroscedastic diagonal.

    ``-1/2 y'(Q+D)^-1 y - 1/2 log|Q+D| - n/2 log 2 pi - 1/2 tr(D^-1 (Kff - Q))``
    with ``Q = Kfu Kuu^-1 Kuf``.
    """
    z = np.asarray(u, dtype=float).reshape(-1)
    if z.size < 1:
        raise NumericalError("need at least one inducing input")
    return _elbo(data, kernel, noise.effective(data), z, grad=False)[0]


def elbo_and_grad(theta, z, data: LabeledDataset, family: str, multipliers):
    kern, nv = unpack(theta, family, len(data.sensor_names))
    d = nv[data.codes] * multipliers
    value, (g, g_z), _ = _elbo(data, kern, d, np.asarray(z, dtype=float), grad=True)
    return value, g, g_z
