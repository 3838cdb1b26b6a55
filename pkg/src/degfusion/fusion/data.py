"""Sensor-labelled observations and the per-sensor noise model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import TimeSeries
from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class LabeledDataset:
    """Observations ``(t_i, y_i, sensor_i)`` sorted by time.

    Ties in time are allowed across sensors. Sensors are numbered by their
    position in ``sensor_names`` (sorted), and ``codes[i]`` is the number of
    the sensor that produced observation ``i``.
    """

    times: np.ndarray
    values: np.ndarray
    sensors: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        y = np.array(self.values, dtype=float).reshape(-1)
        s = np.array(self.sensors, dtype=str).reshape(-1)
        if not (t.size == y.size == s.size):
            raise DataError("dataset: times, values and sensors differ in length")
        if t.size < 2:
            raise DataError(f"dataset needs at least 2 observations, got {t.size}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite times or values")
        order = np.argsort(t, kind="stable")
        t, y, s = t[order], y[order], s[order]
        names, codes = np.unique(s, return_inverse=True)
        for arr in (t, y, s, codes):
            arr.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "sensors", s)
        object.__setattr__(self, "sensor_names", tuple(str(n) for n in names))
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "order", order)

    def __len__(self):
        return self.times.size

    @classmethod
    def from_series(cls, *series: TimeSeries) -> "LabeledDataset":
        if not series:
            raise DataError("need at least one series to build a dataset")
        labels = [s.sensor for s in series]
        if len(set(labels)) != len(labels):
            raise DataError(f"sensor labels must be distinct, got {labels}")
        return cls(
            np.concatenate([s.times for s in series]),
            np.concatenate([s.values for s in series]),
            np.concatenate([np.full(len(s), s.sensor) for s in series]),
        )


@dataclass(frozen=True)
class NoiseModel:
    """Per-sensor noise variances, optionally scaled per observation.

    ``multipliers`` (one per observation, in dataset order, each ``>= 1``)
    turn the variance of observation ``i`` into
    ``variances[sensor_i] * multipliers[i]``; degradation scaling uses
    ``1 / d(e_i)**2``.
    """

    variances: dict
    multipliers: np.ndarray | None = None

    def __post_init__(self):
        v = {}
        for k, val in dict(self.variances).items():
            val = float(val)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"noise variance of {k!r} must be positive, got {val!r}")
            v[str(k)] = val
        if not v:
            raise ConfigError("noise model needs at least one sensor")
        object.__setattr__(self, "variances", v)
        if self.multipliers is not None:
            m = np.array(self.multipliers, dtype=float).reshape(-1)
            if not np.all(np.isfinite(m)) or np.any(m <= 0):
                raise ConfigError("noise multipliers must be positive and finite")
            m.flags.writeable = False
            object.__setattr__(self, "multipliers", m)

    def log_variances(self, data: LabeledDataset) -> np.ndarray:
        missing = [s for s in data.sensor_names if s not in self.variances]
        if missing:
            raise ConfigError(f"noise model has no variance for sensors {missing}")
        return np.log([self.variances[s] for s in data.sensor_names])

    def multipliers_for(self, data: LabeledDataset) -> np.ndarray:
        if self.multipliers is None:
            return np.ones(len(data))
        if self.multipliers.size != len(data):
            raise ConfigError(
                f"{self.multipliers.size} noise multipliers for {len(data)} observations"
            )
        return self.multipliers

    def effective(self, data: LabeledDataset) -> np.ndarray:
        """Noise variance of every observation."""
        d = np.exp(self.log_variances(data))[data.codes] * self.multipliers_for(data)
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise DataError("effective noise variances must be positive and finite")
        return d

    def with_variances(self, names, values) -> "NoiseModel":
        v = dict(self.variances)
        v.update({n: float(x) for n, x in zip(names, values)})
        return NoiseModel(v, self.multipliers)

    def to_dict(self, include_multipliers: bool = True) -> dict:
        d = {"variances": dict(self.variances), "scaled": self.multipliers is not None}
        if include_multipliers and self.multipliers is not None:
            d["multipliers"] = self.multipliers.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d["variances"], d.get("multipliers"))
