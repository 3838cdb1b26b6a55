"""Dataset CSV files (``time,value,sensor``) and small export helpers."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .core import TimeSeries
from .errors import DataError

HEADER = ("time", "value", "sensor")


def _fmt(x: float) -> str:
    # repr round-trips exactly and is platform independent
    return repr(float(x))


def write_series(path, *series: TimeSeries) -> None:
    """Write one or more series to a dataset CSV, rows in series order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in series:
            for t, v in zip(s.times, s.values):
                w.writerow((_fmt(t), _fmt(v), s.sensor))


def read_series(path) -> dict:
    """Read a dataset CSV into ``{sensor: TimeSeries}``.

    Rows of a sensor must have strictly increasing times. Errors name the
    file and the 1-based line number.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != HEADER:
        raise DataError(f"{path}:1: expected header {','.join(HEADER)!r}, got {header!r}")
    data: dict = {}
    for line, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataError(f"{path}:{line}: expected 3 fields, got {len(row)}")
        try:
            t, v = float(row[0]), float(row[1])
        except ValueError:
            raise DataError(f"{path}:{line}: cannot parse number in {row!r}") from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise DataError(f"{path}:{line}: non-finite value in {row!r}")
        sensor = row[2].strip()
        if not sensor:
            raise DataError(f"{path}:{line}: empty sensor label")
        times, values, lines = data.setdefault(sensor, ([], [], []))
        if times and t <= times[-1]:
            raise DataError(
                f"{path}:{line}: time {t!r} of sensor {sensor!r} does not increase "
                f"(previous row at line {lines[-1]} has {times[-1]!r})"
            )
        times.append(t)
        values.append(v)
        lines.append(line)
    if not data:
        raise DataError(f"{path}: no data rows")
    return {k: TimeSeries(k, np.array(t), np.array(v)) for k, (t, v, _) in data.items()}


def write_table(path, header, columns) -> None:
    """Write equal-length numeric (or string) columns as CSV."""
    cols = [np.asarray(c) for c in columns]
    n = {c.size for c in cols}
    if len(n) != 1:
        raise DataError("table columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def svg_line_chart(path, curves, title: str = "", xlabel: str = "", ylabel: str = "",
                   width: int = 720, height: int = 360) -> None:
    """Minimal SVG line chart; ``curves`` is a list of ``(label, x, y)``."""
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
    xs = np.concatenate([np.asarray(c[1], float) for c in curves])
    ys = np.concatenate([np.asarray(c[2], float) for c in curves])
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    x1 = x1 if x1 > x0 else x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (np.asarray(y, float) - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2})">{ylabel}</text>',
    ]
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 4}" y="{py(v):.1f}" text-anchor="end">{v:.4g}</text>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(v):.1f}" y="{top + ph + 14}" text-anchor="middle">{v:.4g}</text>')
    for k, (label, x, y) in enumerate(curves):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if x.size > 2000:  # thin long series; a chart cannot show more anyway
            idx = np.unique(np.linspace(0, x.size - 1, 2000).astype(int))
            x, y = x[idx], y[idx]
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px(x), py(y)))
        color = palette[k % len(palette)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        out.append(
            f'<text x="{left + 8}" y="{top + 14 + 13 * k}" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
