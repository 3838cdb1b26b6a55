"""Time-series containers, exposure, two-sensor alignment and ratios."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, DataError, DegenerateRatioError

EXPOSURE_MODES = ("cumulative", "elapsed")


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


def _check_sensor(sensor) -> str:
    if not isinstance(sensor, str) or not sensor:
        raise DataError(f"sensor label must be a non-empty string, got {sensor!r}")
    return sensor


@dataclass(frozen=True)
class TimeSeries:
    """Ordered samples from one sensor.

    ``times`` must be strictly increasing and every value finite. Arrays are
    copied on construction and made read-only.
    """

    sensor: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        _check_sensor(self.sensor)
        times = _frozen(self.times, "times")
        values = _frozen(self.values, "values")
        if times.size < 1:
            raise DataError(f"series {self.sensor!r} is empty")
        if times.size != values.size:
            raise DataError(
                f"series {self.sensor!r}: {times.size} times but {values.size} values"
            )
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise DataError(f"series {self.sensor!r} contains non-finite entries")
        if np.any(np.diff(times) <= 0):
            k = int(np.argmax(np.diff(times) <= 0))
            raise DataError(
                f"series {self.sensor!r}: times not strictly increasing at index {k + 1}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.times.size

    def with_values(self, values, sensor: str | None = None) -> "TimeSeries":
        return TimeSeries(sensor or self.sensor, self.times, values)


@dataclass(frozen=True)
class ExposureSeries:
    sensor: str
    times: np.ndarray
    exposures: np.ndarray

    def __post_init__(self):
        _check_sensor(self.sensor)
        times = _frozen(self.times, "times")
        exposures = _frozen(self.exposures, "exposures")
        if times.size != exposures.size:
            raise DataError("exposure series: length mismatch")
        if np.any(exposures < 0) or np.any(np.diff(exposures) < 0):
            raise DataError(
                f"exposure of {self.sensor!r} must be non-negative and non-decreasing"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "exposures", exposures)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class AlignedPair:
    """Samples of two sensors at their common timestamps."""

    times: np.ndarray
    a_values: np.ndarray
    b_values: np.ndarray
    e_a: np.ndarray
    e_b: np.ndarray
    sensors: tuple = ("a", "b")
    a_index: np.ndarray | None = field(default=None, repr=False)
    b_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("times", "a_values", "b_values", "e_a", "e_b"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        n = self.times.size
        if any(getattr(self, k).size != n for k in ("a_values", "b_values", "e_a", "e_b")):
            raise DataError("aligned pair: sequences differ in length")
        if n < 2:
            raise AlignmentError(f"need at least 2 common samples, got {n}")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("aligned pair: times not strictly increasing")

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class RatioSeries:
    exposure: np.ndarray
    ratio: np.ndarray
    dropped: int


def compute_exposure(
    ts: TimeSeries,
    mode: str = "cumulative",
    reference: TimeSeries | None = None,
    normalize: bool = True,
) -> ExposureSeries:
    """Cumulative exposure of a sensor.

    Parameters
    ----------
    ts : TimeSeries
        Sensor whose exposure is wanted.
    mode : {"cumulative", "elapsed"}
        ``"cumulative"`` sums the measured values (the exposure dose is taken
        proportional to what the sensor measured); ``"elapsed"`` uses time since
        the first sample.
    reference : TimeSeries, optional
        Main sensor used for normalization. Defaults to ``ts`` itself, so the
        reference ends at exposure 1.
    normalize : bool
        If False, exposures stay in raw units (value sums or time units).

    Exposure at mission start is an implicit 0; ``exposures[0]`` is the
    exposure after the first sample.
    """
    if mode not in EXPOSURE_MODES:
        raise DataError(f"unknown exposure mode {mode!r}; expected one of {EXPOSURE_MODES}")
    ref = ts if reference is None else reference
    if mode == "cumulative":
        for series in (ts, ref):
            if np.any(series.values <= 0):
                k = int(np.argmax(series.values <= 0))
                raise DataError(
                    f"cumulative exposure needs positive values; sensor "
                    f"{series.sensor!r} has {series.values[k]!r} at index {k}"
                )
        exposures = np.cumsum(ts.values)
        if normalize:
            total = float(np.sum(ref.values))
            if total == 0.0:
                raise DataError("reference sensor has zero total; cannot normalize exposure")
            exposures = exposures / total
    else:
        exposures = ts.times - ref.times[0]
        if normalize:
            span = ref.times[-1] - ref.times[0]
            if span <= 0:
                raise DataError("reference sensor spans zero time; cannot normalize")
            exposures = exposures / span
        exposures = np.maximum(exposures, 0.0)
    return ExposureSeries(ts.sensor, ts.times, exposures)


def align(
    a: TimeSeries,
    b: TimeSeries,
    e_a: ExposureSeries,
    e_b: ExposureSeries,
    tol: float = 0.0,
) -> AlignedPair:
    """Match samples of ``a`` and ``b`` taken within ``tol`` of each other.

    Matching is greedy nearest-neighbour in time order and uses each sample
    at most once. The output carries the main sensor's (``a``) timestamps.
    """
    if a.sensor == b.sensor:
        raise DataError(f"cannot align sensor {a.sensor!r} with itself")
    if tol < 0:
        raise DataError("alignment tolerance must be >= 0")
    if len(e_a) != len(a) or len(e_b) != len(b):
        raise DataError("exposure series do not match their time series")

    ta, tb = a.times, b.times
    if tol == 0:
        _, ia, ib = np.intersect1d(ta, tb, assume_unique=True, return_indices=True)
    else:
        ia, ib = [], []
        i = j = 0
        while i < ta.size and j < tb.size:
            gap = ta[i] - tb[j]
            if gap < -tol:
                i += 1
            elif gap > tol:
                j += 1
            elif i + 1 < ta.size and abs(ta[i + 1] - tb[j]) < abs(gap):
                i += 1
            elif j + 1 < tb.size and abs(tb[j + 1] - ta[i]) < abs(gap):
                j += 1
            else:
                ia.append(i)
                ib.append(j)
                i += 1
                j += 1
        ia, ib = np.asarray(ia, dtype=int), np.asarray(ib, dtype=int)

    if ia.size < 2:
        raise AlignmentError(
            f"sensors {a.sensor!r} and {b.sensor!r} share {ia.size} timestamps "
            f"(tolerance {tol}); at least 2 are required"
        )
    return AlignedPair(
        times=ta[ia],
        a_values=a.values[ia],
        b_values=b.values[ib],
        e_a=e_a.exposures[ia],
        e_b=e_b.exposures[ib],
        sensors=(a.sensor, b.sensor),
        a_index=ia,
        b_index=ib,
    )


def default_guard(b_values) -> float:
    return 1e-12 * float(np.median(np.abs(b_values)))


def ratio_of(a_values, b_values, exposure, eps_guard: float | None = None) -> RatioSeries:
    a_values = np.asarray(a_values, dtype=float)
    b_values = np.asarray(b_values, dtype=float)
    if eps_guard is None:
        eps_guard = default_guard(b_values)
    keep = np.abs(b_values) >= eps_guard
    if not np.any(keep):
        raise DegenerateRatioError("all ratio denominators fall below the guard")
    return RatioSeries(
        exposure=np.asarray(exposure, dtype=float)[keep],
        ratio=a_values[keep] / b_values[keep],
        dropped=int(keep.size - keep.sum()),
    )


def ratio(p: AlignedPair, eps_guard: float | None = None) -> RatioSeries:
    """Pointwise ``a / b`` keyed by the main sensor's exposure.

    Pairs with ``|b| < eps_guard`` are dropped and counted in ``dropped``.
    The default guard is ``1e-12 * median(|b|)``.
    """
    return ratio_of(p.a_values, p.b_values, p.e_a, eps_guard)


def relative_change(prev_a, next_a, prev_b, next_b) -> float:
    """``|next_a - prev_a| / |prev_a| + |next_b - prev_b| / |prev_b|`` in the 2-norm."""
    total = 0.0
    for prev, nxt in ((prev_a, next_a), (prev_b, next_b)):
        prev = np.asarray(prev, dtype=float)
        nxt = np.asarray(nxt, dtype=float)
        if prev.shape != nxt.shape:
            raise DataError("relative_change: length mismatch")
        norm = np.linalg.norm(prev)
        if norm == 0:
            raise DataError("relative_change: previous iterate has zero norm")
        total += np.linalg.norm(nxt - prev) / norm
    return float(total)
