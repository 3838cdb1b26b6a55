"""Command-line front end: simulate, correct, fuse, report, pipeline.

Every subcommand writes into a private temporary directory under ``--out``
and renames it into place only on success, so a failed run never leaves a
half-written result set. Exit codes: 0 success, 2 configuration error,
3 data error (including unreadable or malformed input), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .core import align, compute_exposure
from .correction import CorrectionConfig, apply_correction, correct
from .degmodels import FitSpec, FittedDegradationModel
from .errors import ConfigError, DataError, DegFusionError
from .fusion import FusionConfig, GPPosterior, fuse, prediction_table
from .io import read_series, svg_line_chart, write_series, write_table
from .synth import ScenarioSpec, evaluate_recovery, generate

log = logging.getLogger("degfusion")

SUBDIRS = {"simulate": "data", "correct": "correct", "fuse": "fuse", "report": "report"}


@dataclass
class RunConfig:
    """Everything a run needs; built from defaults, a JSON file and flags.

    ``inputs`` maps ``"a"``, ``"b"`` and optionally ``"truth"`` to CSV
    paths; when absent, the files written by ``simulate`` under ``out`` are
    used. ``fusion.m`` is a list: one fit per entry.
    """

    out: str = "out"
    seed: int = 0
    inputs: dict = field(default_factory=dict)
    main_sensor: str = "a"
    backup_sensor: str = "b"
    scenario: dict = field(default_factory=dict)
    exposure_mode: str = "cumulative"
    align_tol: float = 0.0
    correction: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=lambda: {"m": [100]})
    jobs: int = 1
    svg: bool = False

    # validated views, filled by validate()
    def validate(self) -> "RunConfig":
        unknown = set(self.inputs) - {"a", "b", "truth"}
        if unknown:
            raise ConfigError(f"unknown input keys: {sorted(unknown)}")
        spec = dict(self.scenario)
        spec.setdefault("seed", self.seed)
        self.scenario_spec = ScenarioSpec.from_dict(spec)
        if self.scenario_spec.exposure_mode != self.exposure_mode and "exposure_mode" in spec:
            raise ConfigError("scenario.exposure_mode and exposure_mode disagree")
        self.fit_spec = FitSpec.from_dict(self.fit)
        corr = dict(self.correction)
        bad = set(corr) - {"method", "epsilon", "max_iterations", "eps_guard"}
        if bad:
            raise ConfigError(f"unknown correction keys: {sorted(bad)}")
        self.correction_config = CorrectionConfig(fit_spec=self.fit_spec, **corr)
        fus = dict(self.fusion)
        m_list = fus.pop("m", [100])
        m_list = [m_list] if np.ndim(m_list) == 0 else list(m_list)
        if not m_list or any(int(m) < 1 for m in m_list):
            raise ConfigError("fusion.m must list positive inducing counts")
        self.m_list = [int(m) for m in m_list]
        self.fusion_config = FusionConfig.from_dict({**fus, "m": self.m_list[0]})
        if self.exposure_mode not in ("cumulative", "elapsed"):
            raise ConfigError(f"unknown exposure mode {self.exposure_mode!r}")
        if self.align_tol < 0:
            raise ConfigError("align_tol must be >= 0")
        if int(self.jobs) < 1:
            raise ConfigError("--jobs must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {
            "out": self.out,
            "seed": self.seed,
            "inputs": self.inputs,
            "main_sensor": self.main_sensor,
            "backup_sensor": self.backup_sensor,
            "scenario": self.scenario_spec.to_dict(),
            "exposure_mode": self.exposure_mode,
            "align_tol": self.align_tol,
            "correction": {
                k: v for k, v in self.correction_config.to_dict().items() if k != "fit_spec"
            },
            "fit": self.fit_spec.to_dict(),
            "fusion": {**self.fusion_config.to_dict(), "m": self.m_list},
            "jobs": self.jobs,
            "svg": self.svg,
        }


def load_config(path: str | None, overrides: dict) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**raw)
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("method",):
            cfg.correction = {**cfg.correction, "method": value}
        elif key == "fit":
            cfg.fit = {**cfg.fit, "family": value}
        elif key == "m":
            cfg.fusion = {**cfg.fusion, "m": value}
        elif key == "mode":
            cfg.fusion = {**cfg.fusion, "mode": value}
        else:
            setattr(cfg, key, value)
    return cfg.validate()


@contextmanager
def staged_dir(out: Path, name: str):
    """Yield a temporary directory that replaces ``out/name`` on success."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{name}-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    final = out / name
    if final.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{name}-old-", dir=out))
        os.replace(final, old / name)
        os.replace(tmp, final)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, final)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig) -> Path:
    sc = generate(cfg.scenario_spec)
    out = Path(cfg.out)
    with staged_dir(out, SUBDIRS["simulate"]) as d:
        write_series(d / "a.csv", sc.a)
        write_series(d / "b.csv", sc.b)
        write_series(d / "truth.csv", sc.s)
        _dump(d / "scenario.json", cfg.scenario_spec.to_dict())
        if cfg.svg:
            svg_line_chart(
                d / "signals.svg",
                [("s", sc.s.times, sc.s.values), ("a", sc.a.times, sc.a.values),
                 ("b", sc.b.times, sc.b.values)],
                title="simulated signals", xlabel="time", ylabel="value",
            )
    log.info("wrote %d/%d/%d rows to %s", len(sc.a), len(sc.b), len(sc.s), out / "data")
    return out / SUBDIRS["simulate"]


def _input_path(cfg: RunConfig, key: str, default: str, required: bool = True) -> Path | None:
    p = Path(cfg.inputs[key]) if key in cfg.inputs else Path(cfg.out) / "data" / default
    if not p.exists():
        if required:
            raise DataError(
                f"input {key!r} not found at {p}; run `simulate` first or set inputs.{key}"
            )
        return None
    return p


def _load_pair(cfg: RunConfig):
    series = {}
    for key, default in (("a", "a.csv"), ("b", "b.csv")):
        path = _input_path(cfg, key, default)
        found = read_series(path)
        name = cfg.main_sensor if key == "a" else cfg.backup_sensor
        if name not in found:
            raise DataError(f"{path}: no rows for sensor {name!r} (found {sorted(found)})")
        series[key] = found[name]
    return series["a"], series["b"]


def cmd_correct(cfg: RunConfig) -> Path:
    a, b = _load_pair(cfg)
    e_a = compute_exposure(a, cfg.exposure_mode, reference=a)
    e_b = compute_exposure(b, cfg.exposure_mode, reference=a)
    pair = align(a, b, e_a, e_b, cfg.align_tol)
    result = correct(pair, cfg.correction_config)
    d_c = result.degradation
    a_full = apply_correction(a, e_a, d_c)
    b_full = apply_correction(b, e_b, d_c)
    out = Path(cfg.out)
    with staged_dir(out, SUBDIRS["correct"]) as d:
        write_series(d / "a_corrected.csv", a_full)
        write_series(d / "b_corrected.csv", b_full)
        write_series(d / "common_corrected.csv", result.a_corrected, result.b_corrected)
        (d / "degradation.json").write_text(d_c.to_json(indent=2) + "\n", encoding="utf-8")
        summary = result.to_dict()
        for k in ("a_corrected", "b_corrected"):
            summary.pop(k)
        summary["config"] = cfg.to_dict()
        _dump(d / "history.json", summary)
        # plot data: raw vs corrected signals
        write_table(
            d / "plot_signals.csv",
            ("time", "sensor", "raw", "corrected", "exposure"),
            [
                np.concatenate([a.times, b.times]),
                np.array([a.sensor] * len(a) + [b.sensor] * len(b)),
                np.concatenate([a.values, b.values]),
                np.concatenate([a_full.values, b_full.values]),
                np.concatenate([e_a.exposures, e_b.exposures]),
            ],
        )
        # raw vs corrected ratio with the fitted degradation
        write_table(
            d / "plot_ratio.csv",
            ("exposure", "ratio_raw", "ratio_corrected", "degradation"),
            [
                pair.e_a,
                pair.a_values / pair.b_values,
                result.a_corrected.values / result.b_corrected.values,
                d_c(pair.e_a),
            ],
        )
        hist = result.history
        write_table(
            d / "plot_history.csv",
            ("iteration", "relative_change", "residual"),
            [
                np.array([h.iteration for h in hist]),
                np.array([h.relative_change for h in hist]),
                np.array([h.residual for h in hist]),
            ],
        )
        if cfg.svg:
            svg_line_chart(
                d / "ratio.svg",
                [("raw ratio", pair.e_a, pair.a_values / pair.b_values),
                 ("fitted d", pair.e_a, d_c(pair.e_a))],
                title="ratio and fitted degradation", xlabel="exposure", ylabel="ratio",
            )
            svg_line_chart(
                d / "history.svg",
                [("log10 relative change", [h.iteration for h in hist],
                  np.log10(np.maximum([h.relative_change for h in hist], 1e-300)))],
                title="convergence history", xlabel="iteration", ylabel="log10 change",
            )
    log.info(
        "correction %s after %d iterations (method=%s)",
        "converged" if result.converged else "did not converge",
        result.iterations_used,
        result.method,
    )
    return out / SUBDIRS["correct"]


def _corrected_inputs(cfg: RunConfig):
    base = Path(cfg.out) / "correct"
    series = []
    for name in ("a_corrected.csv", "b_corrected.csv"):
        p = base / name
        if not p.exists():
            raise DataError(f"corrected input {p} is missing; run `correct` first")
        series.extend(read_series(p).values())
    deg_path = base / "degradation.json"
    d_c = None
    if deg_path.exists():
        d_c = FittedDegradationModel.from_json(deg_path.read_text(encoding="utf-8"))
    return series, d_c


def _fit_one(series, fusion_cfg: FusionConfig, d_c, exposures):
    return fuse(*series, cfg=fusion_cfg, degradation=d_c, exposures=exposures)


def cmd_fuse(cfg: RunConfig) -> Path:
    series, d_c = _corrected_inputs(cfg)
    exposures = None
    if cfg.fusion_config.degradation_scaling:
        raw_a, raw_b = _load_pair(cfg)
        exposures = {
            s.sensor: compute_exposure(s, cfg.exposure_mode, reference=raw_a)
            for s in (raw_a, raw_b)
        }
    fc = cfg.fusion_config
    if fc.mode == "exact":
        configs = [("exact", fc)]
    else:
        configs = [(f"m{m}", FusionConfig.from_dict({**fc.to_dict(), "m": m})) for m in cfg.m_list]
    jobs = min(int(cfg.jobs), len(configs))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fit_one, series, c, d_c, exposures) for _, c in configs]
            posteriors = [f.result() for f in futures]
    else:
        posteriors = [_fit_one(series, c, d_c, exposures) for _, c in configs]

    t_grid = np.unique(np.concatenate([s.times for s in series]))
    out = Path(cfg.out)
    with staged_dir(out, SUBDIRS["fuse"]) as d:
        for (name, _), post in zip(configs, posteriors):
            sub = d / name
            sub.mkdir()
            table = prediction_table(post, t_grid)
            write_table(sub / "prediction.csv", ("time", "mean", "variance", "lower95", "upper95"),
                        table.T)
            (sub / "posterior.json").write_text(post.to_json() + "\n", encoding="utf-8")
            if cfg.svg:
                svg_line_chart(
                    sub / "posterior.svg",
                    [("mean", table[:, 0], table[:, 1]), ("lower95", table[:, 0], table[:, 3]),
                     ("upper95", table[:, 0], table[:, 4])],
                    title=f"posterior ({name})", xlabel="time", ylabel="signal",
                )
            log.info("%s: objective %.6g", name, post.objective)
    return out / SUBDIRS["fuse"]


def _format_table(metrics: dict) -> str:
    rows = [(k, v) for k, v in sorted(metrics.items()) if isinstance(v, (int, float, bool))]
    width = max((len(k) for k, _ in rows), default=10)
    lines = [f"{'metric':<{width}}  value", f"{'-' * width}  -----"]
    for k, v in rows:
        lines.append(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig) -> Path:
    base = Path(cfg.out)
    hist_path = base / "correct" / "history.json"
    if not hist_path.exists():
        raise DataError(f"{hist_path} is missing; run `correct` first")
    history = json.loads(hist_path.read_text(encoding="utf-8"))
    metrics = {
        "converged": bool(history["converged"]),
        "iterations_used": int(history["iterations_used"]),
        "method": history["method"],
        "final_relative_change": float(history["history"][-1]["relative_change"]),
        "degradation_residual": float(history["degradation"]["residual"]),
    }
    posteriors = {}
    fuse_dir = base / "fuse"
    if fuse_dir.exists():
        for sub in sorted(p for p in fuse_dir.iterdir() if (p / "posterior.json").exists()):
            posteriors[sub.name] = GPPosterior.from_json((sub / "posterior.json").read_text())
            metrics[f"objective_{sub.name}"] = posteriors[sub.name].objective

    metrics.update(_truth_metrics(cfg, base, posteriors))

    out = Path(cfg.out)
    with staged_dir(out, SUBDIRS["report"]) as d:
        _dump(d / "metrics.json", metrics)
        (d / "metrics.txt").write_text(_format_table(metrics), encoding="utf-8")
    sys.stdout.write(_format_table(metrics))
    return out / SUBDIRS["report"]


def _series_metrics(s, a_c, b_c, posteriors) -> dict:
    """Errors against a truth series, on the timestamps the truth covers."""
    out = {}
    rms = float(np.sqrt(np.mean(s.values**2)))
    for name, series in (("a", a_c), ("b", b_c)):
        common, i_s, i_c = np.intersect1d(s.times, series.times, return_indices=True)
        if common.size == 0:
            continue
        err = series.values[i_c] - s.values[i_s]
        out[f"rmse_{name}_full"] = float(np.sqrt(np.mean(err**2)))
        out[f"maxerr_{name}_full"] = float(np.max(np.abs(err)))
        out[f"rel_rmse_{name}_full"] = out[f"rmse_{name}_full"] / rms
    for name, post in posteriors.items():
        mean, _ = post.predict(s.times)
        err = mean - s.values
        out[f"rmse_posterior_full_{name}"] = float(np.sqrt(np.mean(err**2)))
        out[f"maxerr_posterior_full_{name}"] = float(np.max(np.abs(err)))
    return out


def _truth_metrics(cfg: RunConfig, base: Path, posteriors: dict) -> dict:
    """Ground-truth metrics; empty when no truth is available.

    A simulated run (scenario sidecar present, no explicit inputs) is
    regenerated from its sidecar and scored with ``evaluate_recovery``.
    Otherwise an explicit ``inputs.truth`` CSV is compared sample by sample.
    """
    sidecar = base / "data" / "scenario.json"
    corr = base / "correct"
    if not cfg.inputs and sidecar.exists():
        sc = generate(ScenarioSpec.from_dict(json.loads(sidecar.read_text(encoding="utf-8"))))
        common = read_series(corr / "common_corrected.csv")
        d_c = FittedDegradationModel.from_json((corr / "degradation.json").read_text())
        result = SimpleNamespace(
            a_corrected=common[sc.a.sensor], b_corrected=common[sc.b.sensor], degradation=d_c
        )
        out = evaluate_recovery(sc, result)
        for name, post in posteriors.items():
            extra = evaluate_recovery(sc, result, post)
            for key in ("rmse_posterior_common", "maxerr_posterior_common",
                        "rmse_posterior_full", "maxerr_posterior_full"):
                out[f"{key}_{name}"] = extra[key]
        return out
    if "truth" not in cfg.inputs:
        return {}
    truth = read_series(_input_path(cfg, "truth", "truth.csv"))
    s = truth["s"] if "s" in truth else next(iter(truth.values()))
    a_c = next(iter(read_series(corr / "a_corrected.csv").values()))
    b_c = next(iter(read_series(corr / "b_corrected.csv").values()))
    return _series_metrics(s, a_c, b_c, posteriors)


def cmd_pipeline(cfg: RunConfig) -> Path:
    if not cfg.inputs:
        cmd_simulate(cfg)
    cmd_correct(cfg)
    cmd_fuse(cfg)
    return cmd_report(cfg)


COMMANDS = {
    "simulate": cmd_simulate,
    "correct": cmd_correct,
    "fuse": cmd_fuse,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def _m_list(text: str):
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--m expects a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degfusion",
        description="Learn sensor degradation from a redundant pair and fuse the corrected signals.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="scenario RNG seed")
    common.add_argument("--method", choices=("one", "both"), help="correction algorithm")
    common.add_argument("--fit", choices=("exp", "explin", "isotonic", "smooth"),
                        help="degradation fit family")
    common.add_argument("--m", type=_m_list, metavar="LIST",
                        help="inducing counts for the fusion sweep, e.g. 100,300,500")
    common.add_argument("--mode", choices=("exact", "sparse"), help="fusion mode")
    common.add_argument("--jobs", type=int, help="parallel workers for the fusion sweep")
    common.add_argument("--svg", action="store_true", default=None, help="also write SVG charts")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "generate a synthetic degraded two-sensor dataset",
        "correct": "learn the degradation and correct both sensors",
        "fuse": "fuse corrected sensors with a Gaussian process",
        "report": "compute metrics (against ground truth when available)",
        "pipeline": "simulate (unless inputs are given), correct, fuse and report",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "out": args.out,
        "seed": args.seed,
        "method": args.method,
        "fit": args.fit,
        "m": args.m,
        "mode": args.mode,
        "jobs": args.jobs,
        "svg": args.svg,
    }
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except DegFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
