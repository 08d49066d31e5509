"""Experiment orchestration: multi-run training, aggregation, reports and loss plots."""
from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import (
    DataError,
    SplitSpec,
    TimeSeries,
    gen_pg,
    gen_ro,
    load_csv,
    make_split,
    normalize,
    write_manifest,
    write_series_csv,
)
from .neuralfde import LossHistory, TrainConfig, TrainingError, evaluate, train
from .solvers import TimeGrid

__all__ = [
    "ExperimentSpec",
    "RunResult",
    "ExperimentError",
    "build_dataset",
    "run_experiment",
    "aggregate",
    "format_sci",
    "emit_report",
    "emit_loss_plot",
]

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    """One table row: a dataset, a split protocol, a model kind and its training config.

    Synthetic data (``system`` = ro/pg) is generated with ``data_alpha`` on
    ``points`` samples spanning ``[0, horizon]``; otherwise ``csv_path`` is
    read.  ``extrapolation_factor`` stretches the test window past the
    training horizon.
    """

    system: str | None = "ro"
    data_alpha: float = 0.99
    csv_path: str | None = None
    value_column: str = "Open"
    time_column: str = "0"
    split: str = "reconstruction"
    model: str = "nfde"
    points: int = 200
    horizon: float = 200.0
    extrapolation_factor: float = 1.5
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "results"
    jobs: int = 1

    def __post_init__(self):
        if self.model not in ("nfde", "node"):
            raise ValueError("model must be nfde or node")
        if self.system is None and self.csv_path is None:
            raise ValueError("need a synthetic system or a CSV path")
        if self.system is not None and self.system not in ("ro", "pg"):
            raise ValueError("system must be ro or pg")
        if self.train.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.model == "node" and self.train.solver != "euler_ode":
            self.train = replace(self.train, solver="euler_ode")

    @property
    def dataset_id(self) -> str:
        if self.system is None:
            return Path(self.csv_path).stem
        return f"{self.system.upper()}_alpha={self.data_alpha:g}"


@dataclass
class RunResult:
    dataset: str
    model: str
    split: str
    run_index: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    alpha: list[float | None] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)
    failed_runs: list[int] = field(default_factory=list)
    mse_avg: float = math.nan
    mse_std: float = math.nan


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        raise ValueError("nothing to aggregate")
    return statistics.fmean(values), statistics.pstdev(values)


def _synthetic(system: str, alpha: float, grid: TimeGrid) -> TimeSeries:
    if system == "ro":
        return gen_ro(alpha, 0.3, grid)
    return gen_pg(alpha, grid=grid)


def build_dataset(spec: ExperimentSpec) -> tuple[TimeSeries, TimeSeries]:
    """Raw (un-normalised) train and test series for ``spec``."""
    if spec.system is None:
        series = load_csv(spec.csv_path, spec.time_column, spec.value_column).series
        if spec.split == "extrapolation":
            n_train = min(spec.points, len(series) - 1)
            horizon = float(series.times[n_train - 1])
            return make_split(series, SplitSpec("extrapolation", train_horizon=horizon))
        if spec.split == "completion":
            return make_split(series, SplitSpec("completion", stride=3, train_per_block=2))
        return make_split(series.subset(slice(0, spec.points)), SplitSpec("reconstruction"))

    n = spec.points
    if n < 2:
        raise DataError("need at least two points")
    dt = spec.horizon / (n - 1)
    if spec.split == "reconstruction":
        return make_split(_synthetic(spec.system, spec.data_alpha, TimeGrid(0.0, dt, n - 1)), SplitSpec())
    if spec.split == "extrapolation":
        test_end = spec.horizon * spec.extrapolation_factor
        series = _synthetic(spec.system, spec.data_alpha, TimeGrid.spanning(0.0, test_end, dt))
        return make_split(
            series,
            SplitSpec("extrapolation", train_horizon=spec.horizon, test_horizon=test_end, test_count=n),
        )
    # completion: three interleaved samples per training point, two of them held out
    fine = TimeGrid(0.0, spec.horizon / (3 * n - 1), 3 * n - 1)
    series = _synthetic(spec.system, spec.data_alpha, fine)
    return make_split(series, SplitSpec("completion", stride=3, train_per_block=1))


def _one_run(args):
    k, train_n, test_n, stats, config = args
    try:
        model, history = train(train_n, config, stats)
    except TrainingError as exc:
        return k, None, None, str(exc)
    if history.failed:
        return k, model, history, history.message
    return k, model, history, None


def run_experiment(spec: ExperimentSpec) -> RunResult:
    """Train ``spec.train.runs`` models (seeds base, base+1, ...) and evaluate each on the test split.

    Writes into ``spec.out_dir``: the train/test datasets and manifest,
    ``model_run{k}.txt``, ``loss_run{k}.csv`` (``iter,loss,alpha``),
    ``timings.csv`` and ``report.csv``/``report.txt``.  Wall-clock numbers
    live only in ``timings.csv`` so every other file is reproducible
    byte for byte.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_raw, test_raw = build_dataset(spec)
    train_n, stats = normalize(train_raw)
    test_n, _ = normalize(test_raw, stats)
    write_series_csv(train_raw, out / "train.csv")
    write_series_csv(test_raw, out / "test.csv")
    write_manifest(
        out / "manifest.json",
        dataset=spec.dataset_id,
        system=spec.system,
        data_alpha=spec.data_alpha if spec.system else None,
        csv_path=spec.csv_path,
        split=spec.split,
        model=spec.model,
        points=spec.points,
        horizon=spec.horizon,
        train_points=len(train_raw),
        test_points=len(test_raw),
        norm_lo=stats.lo.tolist(),
        norm_hi=stats.hi.tolist(),
        train=asdict(spec.train),
    )

    jobs = [
        (k, train_n, test_n, stats, replace(spec.train, seed=spec.train.seed + k))
        for k in range(spec.train.runs)
    ]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(_one_run, jobs))
    else:
        outcomes = [_one_run(j) for j in jobs]
    outcomes.sort(key=lambda o: o[0])

    result = RunResult(spec.dataset_id, spec.model, spec.split)
    timing_lines = ["run,seconds"]
    for k, model, history, err in outcomes:
        if history is not None:
            history.to_csv(out / f"loss_run{k + 1}.csv", with_seconds=False)
            timing_lines.append(f"{k + 1},{sum(history.seconds):.6f}")
        if err is not None:
            log.warning("run %d failed: %s", k + 1, err)
            result.failed_runs.append(k + 1)
            continue
        model.save(out / f"model_run{k + 1}.txt")
        result.run_index.append(k + 1)
        result.train_loss.append(history.final_loss)
        result.test_mse.append(evaluate(model, test_n))
        result.alpha.append(model.realized_alpha)
        result.wall_seconds.append(sum(history.seconds))
    if not result.test_mse:
        raise ExperimentError("all runs failed")
    result.mse_avg, result.mse_std = aggregate(result.test_mse)
    (out / "timings.csv").write_text("\n".join(timing_lines) + "\n")
    emit_report([result], out / "report")
    return result


def format_sci(x: float) -> str:
    """Table number style: ``0.000395`` -> ``3.95E-4``."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    mant, exp = f"{x:.2E}".split("E")
    return f"{mant}E{int(exp)}"


def emit_report(results: Sequence[RunResult], path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and an aligned plain-text table ``<path>.txt``."""
    if not results:
        raise ValueError("no results to report")
    path = Path(path)
    k = max(len(r.alpha) for r in results)
    header = ["dataset", "model", "split", "mse_avg", "mse_std"] + [f"alpha_run{i + 1}" for i in range(k)]
    rows = []
    for r in results:
        alphas = [("" if a is None else f"{a:.4f}") for a in r.alpha]
        alphas += [""] * (k - len(alphas))
        if r.model == "node":
            alphas = [""] * k
        rows.append([r.dataset, r.model, r.split, format_sci(r.mse_avg), format_sci(r.mse_std)] + alphas)
    csv_path = path.with_suffix(".csv")
    csv_path.write_text("\n".join(",".join(row) for row in [header] + rows) + "\n")

    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = [
        "# MSE_avg +- std over runs (population std); alpha = learned derivative order per run",
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    txt_path = path.with_suffix(".txt")
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def emit_loss_plot(histories: Sequence[tuple[str, LossHistory]], path, title: str = "Training loss") -> Path:
    """SVG of loss vs iteration, one polyline per history, log-scale vertical axis with decade ticks."""
    if not histories:
        raise ValueError("no histories to plot")
    width, height = 640, 420
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom

    finite = [v for _, h in histories for v in h.losses if v > 0 and math.isfinite(v)]
    if not finite:
        raise ValueError("no positive finite losses to plot")
    lo_dec = math.floor(math.log10(min(finite)))
    hi_dec = math.ceil(math.log10(max(finite)))
    if hi_dec == lo_dec:
        hi_dec += 1
    n_max = max(max(len(h.losses) - 1, 1) for _, h in histories)

    def sx(i):
        return left + pw * i / n_max

    def sy(v):
        return top + ph * (hi_dec - math.log10(v)) / (hi_dec - lo_dec)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for dec in range(lo_dec, hi_dec + 1):
        y = sy(10.0**dec)
        parts.append(f'<line class="ytick" x1="{left - 5}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">1e{dec}</text>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        i = round(n_max * frac)
        parts.append(
            f'<text x="{sx(i):.2f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{i}</text>'
        )
    parts.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">iteration</text>'
    )
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" transform="rotate(-90 16 {top + ph / 2:.1f})" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">loss</text>'
    )
    for k, (label, hist) in enumerate(histories):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(
            f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(hist.losses) if v > 0 and math.isfinite(v)
        )
        parts.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 18 * k
        parts.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text class="legend" x="{left + pw + 38}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(label)}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def read_loss_csv(path) -> LossHistory:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    hist = LossHistory()
    hist.losses = [float(v) for v in data["loss"]]
    hist.alphas = [None if np.isnan(a) else float(a) for a in data["alpha"]]
    return hist
