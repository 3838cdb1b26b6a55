"""Fit specification and the fitted degradation model value type."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError

FAMILIES = ("exp", "explin", "isotonic", "smooth")
_ALIASES = {
    "exp": "exp",
    "explin": "explin",
    "isotonic": "isotonic",
    "smooth": "smooth",
    "smoothmonotonic": "smooth",
    "smooth_monotonic": "smooth",
}


def canonical_family(name: str) -> str:
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise ConfigError(f"unknown fit family {name!r}; expected one of {FAMILIES}")
    return _ALIASES[key]


@dataclass(frozen=True)
class FitSpec:
    """How a degradation ratio curve is fitted.

    ``lam`` is either one weight shared by every adjacent pair or a sequence
    with one weight per gap of the downsampled grid (length ``m - 1``, or
    ``m`` when the grid is anchored at zero).
    """

    family: str = "smooth"
    enforce_unit_at_zero: bool = True
    enforce_convexity: bool = False
    lam: float | tuple = 1.0
    m: int = 100
    max_iter: int = 200
    tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        lam = self.lam
        if np.ndim(lam):
            lam = tuple(float(v) for v in lam)
            if any(v < 0 for v in lam):
                raise ConfigError("regularization weights must be >= 0")
        else:
            lam = float(lam)
            if lam < 0:
                raise ConfigError("regularization weight must be >= 0")
        object.__setattr__(self, "lam", lam)
        if int(self.m) < 2:
            raise ConfigError("downsample count m must be >= 2")
        object.__setattr__(self, "m", int(self.m))
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lam"] = list(self.lam) if isinstance(self.lam, tuple) else self.lam
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitSpec":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown fit spec keys: {sorted(unknown)}")
        return cls(**d)


def exp_family(x, theta1, theta2, theta3=0.0):
    """``1 - exp(t1 t2) + exp(-t1 (x - t2)) + t3 x``, written to hit 1 exactly at 0."""
    x = np.asarray(x, dtype=float)
    return 1.0 + np.exp(theta1 * theta2) * np.expm1(-theta1 * x) + theta3 * x


@dataclass(frozen=True)
class FittedDegradationModel:
    """A fitted ratio/degradation curve, callable on exposures ``>= 0``.

    Parametric families hold ``params``; knot families hold ``knots_x`` and
    non-increasing ``knots_y`` with linear interpolation between knots and
    constant extrapolation past the last one.
    """

    family: str
    params: tuple = ()
    knots_x: np.ndarray | None = None
    knots_y: np.ndarray | None = None
    unit_at_zero: bool = True
    convex: bool = False
    residual: float = float("nan")
    spec: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.family in ("isotonic", "smooth"):
            kx = np.array(self.knots_x, dtype=float)
            ky = np.array(self.knots_y, dtype=float)
            if kx.size < 1 or kx.size != ky.size:
                raise DataError("knot model needs matching, non-empty knot arrays")
            kx.flags.writeable = False
            ky.flags.writeable = False
            object.__setattr__(self, "knots_x", kx)
            object.__setattr__(self, "knots_y", ky)

    def __call__(self, e):
        return evaluate(self, e)

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "constraints": {"unit_at_zero": self.unit_at_zero, "convex": self.convex},
            "residual": self.residual,
            "spec": self.spec,
            "diagnostics": self.diagnostics,
        }
        if self.family in ("exp", "explin"):
            d["params"] = list(self.params)
        else:
            d["knots"] = {"x": self.knots_x.tolist(), "y": self.knots_y.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedDegradationModel":
        knots = d.get("knots") or {}
        cons = d.get("constraints", {})
        return cls(
            family=d["family"],
            params=tuple(d.get("params", ())),
            knots_x=knots.get("x"),
            knots_y=knots.get("y"),
            unit_at_zero=bool(cons.get("unit_at_zero", True)),
            convex=bool(cons.get("convex", False)),
            residual=float(d.get("residual", float("nan"))),
            spec=dict(d.get("spec", {})),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def to_json(self, **kw) -> str:
        # repr-based float output round-trips exactly
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "FittedDegradationModel":
        return cls.from_dict(json.loads(text))


def evaluate(model: FittedDegradationModel, e):
    """Evaluate ``model`` at exposure(s) ``e``; scalar in, scalar out."""
    scalar = np.ndim(e) == 0
    e = np.asarray(e, dtype=float)
    if model.family == "exp":
        out = exp_family(e, *model.params[:2])
    elif model.family == "explin":
        out = exp_family(e, *model.params[:3])
    else:
        left = 1.0 if model.unit_at_zero else model.knots_y[0]
        out = np.interp(e, model.knots_x, model.knots_y, left=left, right=model.knots_y[-1])
        if model.unit_at_zero:
            out = np.where(e == 0.0, 1.0, out)
    return float(out) if scalar else out

