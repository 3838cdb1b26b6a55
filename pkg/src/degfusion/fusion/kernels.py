"""Stationary covariance functions on the real line."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

KERNELS = ("matern12", "rbf")
_ALIASES = {
    "matern12": "matern12",
    "matern": "matern12",
    "exponential": "matern12",
    "ou": "matern12",
    "rbf": "rbf",
    "se": "rbf",
    "squared_exponential": "rbf",
}


def canonical_kernel(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise ConfigError(f"unknown kernel {name!r}; expected one of {KERNELS}")
    return _ALIASES[key]


@dataclass(frozen=True)
class Kernel:
    """``matern12``: ``s2 exp(-|r|/l)``; ``rbf``: ``s2 exp(-r^2 / (2 l^2))``."""

    family: str = "matern12"
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_kernel(self.family))
        for name in ("variance", "lengthscale"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"kernel {name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)

    def _shape(self, r):
        """Correlation as a function of the signed distance ``r``."""
        if self.family == "matern12":
            return np.exp(-np.abs(r) / self.lengthscale)
        return np.exp(-0.5 * (r / self.lengthscale) ** 2)

    def __call__(self, t1, t2=None) -> np.ndarray:
        t1 = np.asarray(t1, dtype=float).reshape(-1)
        t2 = t1 if t2 is None else np.asarray(t2, dtype=float).reshape(-1)
        return self.variance * self._shape(t1[:, None] - t2[None, :])

    def diag(self, t) -> np.ndarray:
        return np.full(np.size(t), self.variance)

    def with_params(self, variance=None, lengthscale=None) -> "Kernel":
        return Kernel(
            self.family,
            self.variance if variance is None else variance,
            self.lengthscale if lengthscale is None else lengthscale,
        )

    def derivative_factors(self, r):
        """Factors ``fl, ft`` with ``dK/dlog l = K fl`` and ``dK/dt1 = K ft``.

        ``r`` is the signed distance ``t1 - t2``. The Matern-1/2 kernel is
        not differentiable at zero distance; there the location factor is 0.
        """
        ell = self.lengthscale
        if self.family == "matern12":
            return np.abs(r) / ell, -np.sign(r) / ell
        q = r / ell
        return q**2, -q / ell

    def gram_and_derivatives(self, t1, t2):
        """``K``, ``dK/dlog l`` and ``dK/dt1`` (derivative in the first input)."""
        t1 = np.asarray(t1, dtype=float).reshape(-1)
        t2 = np.asarray(t2, dtype=float).reshape(-1)
        r = t1[:, None] - t2[None, :]
        K = self.variance * self._shape(r)
        fl, ft = self.derivative_factors(r)
        return K, K * fl, K * ft

    def to_dict(self) -> dict:
        return {"family": self.family, "variance": self.variance, "lengthscale": self.lengthscale}

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel":
        return cls(d["family"], d["variance"], d["lengthscale"])


def kernel_eval(k: Kernel, t: float, t_prime: float) -> float:
    """Covariance between two scalar inputs."""
    return float(k.variance * k._shape(float(t) - float(t_prime)))
