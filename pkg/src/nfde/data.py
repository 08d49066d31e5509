"""Synthetic datasets, CSV ingestion, min-max normalisation and experiment splits."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solvers import TimeGrid, fde_solve_pc

__all__ = [
    "TimeSeries",
    "NormStats",
    "SplitSpec",
    "DataError",
    "gen_ro",
    "gen_pg",
    "load_csv",
    "normalize",
    "denormalize",
    "make_split",
    "write_series_csv",
    "read_series_csv",
    "write_manifest",
    "RO_ALPHAS",
    "PG_ALPHAS",
]

log = logging.getLogger(__name__)

RO_ALPHAS = (0.8, 0.99, 1.0)
PG_ALPHAS = (0.3, 0.4, 0.5, 0.8, 0.99, 1.0)

# ground truth is solved on a grid this many times finer than the output grid
GENERATION_REFINEMENT = 8


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray  # shape (n, d)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if len(times) != len(values) or len(times) < 1:
            raise DataError(f"{len(times)} times vs {len(values)} values")
        if np.any(np.diff(times) <= 0):
            raise DataError("times must be strictly ascending")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.times)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def subset(self, mask_or_idx) -> "TimeSeries":
        return TimeSeries(self.times[mask_or_idx], self.values[mask_or_idx])


@dataclass(frozen=True)
class NormStats:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if np.any(hi <= lo):
            raise DataError("constant series cannot be min-max normalised")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


def normalize(series: TimeSeries, stats: NormStats | None = None) -> tuple[TimeSeries, NormStats]:
    """Min-max map each dimension to [0, 1].

    Pass ``stats`` (e.g. from the training portion) to reuse them; values
    outside the fitted range are left unclamped.
    """
    if stats is None:
        lo, hi = series.values.min(axis=0), series.values.max(axis=0)
        if np.any(hi <= lo):
            raise DataError("constant series cannot be min-max normalised")
        stats = NormStats(lo, hi)
    return TimeSeries(series.times, (series.values - stats.lo) / (stats.hi - stats.lo)), stats


def denormalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    return TimeSeries(series.times, series.values * (stats.hi - stats.lo) + stats.lo)


def _generate(rhs, alpha: float, y0: float, grid: TimeGrid) -> TimeSeries:
    fine = TimeGrid(grid.t0, grid.dt / GENERATION_REFINEMENT, grid.n_steps * GENERATION_REFINEMENT)
    traj = fde_solve_pc(rhs, alpha, [y0], fine)
    vals = traj.values[::GENERATION_REFINEMENT]
    return TimeSeries(grid.nodes, vals)


def gen_ro(alpha: float, x0: float = 0.3, grid: TimeGrid | None = None) -> TimeSeries:
    """Relaxation system ``D^alpha x + x = 1`` sampled on ``grid``."""
    grid = grid or TimeGrid(0.0, 1.0, 199)
    return _generate(lambda t, x: 1.0 - x, alpha, x0, grid)


def gen_pg(
    alpha: float,
    r: float = 0.1,
    K: float = 1000.0,
    p0: float = 100.0,
    grid: TimeGrid | None = None,
) -> TimeSeries:
    """Fractional logistic growth ``D^alpha P = r P (1 - P/K)`` sampled on ``grid``."""
    if K <= 0 or not (0 < p0 <= K):
        raise DataError("need K > 0 and 0 < p0 <= K")
    grid = grid or TimeGrid(0.0, 1.0, 199)
    return _generate(lambda t, p: r * p * (1.0 - p / K), alpha, p0, grid)


def _parse_time(raw: str) -> float | _dt.date:
    raw = raw.strip()
    try:
        return _dt.date.fromisoformat(raw)
    except ValueError:
        return float(raw)


def _resolve_column(header: list[str], col: str | int) -> int:
    if isinstance(col, int) or (isinstance(col, str) and col.isdigit()):
        idx = int(col)
        if not (0 <= idx < len(header)):
            raise DataError(f"column index {idx} out of range for {len(header)} columns")
        return idx
    try:
        return header.index(col)
    except ValueError:
        raise DataError(f"missing column {col!r}; available: {', '.join(header)}") from None


@dataclass
class CsvLoad:
    series: TimeSeries
    skipped: int
    duplicates: int
    origin: object = None


def load_csv(path, time_column: str | int = 0, value_column: str | int = "Open") -> CsvLoad:
    """Read one value column of a CSV as a time series.

    ISO dates become day offsets from the earliest row; numeric times are
    used as-is.  Rows whose time or value does not parse are skipped and
    counted; repeated times keep their first occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        ti = _resolve_column(header, time_column)
        vi = _resolve_column(header, value_column)
        rows = []
        skipped = 0
        for row in reader:
            try:
                t = _parse_time(row[ti])
                v = float(row[vi])
            except (ValueError, IndexError):
                skipped += 1
                continue
            if not np.isfinite(v):
                skipped += 1
                continue
            rows.append((t, v))
    if not rows:
        raise DataError(f"{path}: no usable rows")
    origin = None
    if isinstance(rows[0][0], _dt.date):
        if not all(isinstance(t, _dt.date) for t, _ in rows):
            raise DataError("mixed date and numeric time values")
        origin = min(t for t, _ in rows)
        rows = [(float((t - origin).days), v) for t, v in rows]
    seen: dict[float, float] = {}
    duplicates = 0
    for t, v in rows:
        if t in seen:
            duplicates += 1
            continue
        seen[t] = v
    times = np.array(sorted(seen))
    values = np.array([seen[t] for t in times])
    if skipped:
        log.info("%s: skipped %d unparseable rows", path, skipped)
    return CsvLoad(TimeSeries(times, values), skipped, duplicates, origin)


@dataclass(frozen=True)
class SplitSpec:
    """How to carve train and test sets out of one series.

    ``train_horizon``/``test_horizon`` bound the time windows (None = all);
    ``test_count`` evenly thins the extrapolation test set.  Completion
    splits cut the training window into blocks of ``stride`` consecutive
    points; the first ``train_per_block`` of each block train, the rest test.
    """

    kind: str = "reconstruction"
    train_horizon: float | None = None
    test_horizon: float | None = None
    test_count: int | None = None
    stride: int = 3
    train_per_block: int = 2

    def __post_init__(self):
        if self.kind not in ("reconstruction", "extrapolation", "completion"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if (
            self.kind == "extrapolation"
            and self.train_horizon is not None
            and self.test_horizon is not None
            and self.test_horizon < self.train_horizon
        ):
            raise ValueError("extrapolation test horizon must not precede the training horizon")
        if not (1 <= self.train_per_block < self.stride):
            raise ValueError("need 1 <= train_per_block < stride")


def _window(series: TimeSeries, horizon: float | None) -> TimeSeries:
    if horizon is None:
        return series
    return series.subset(series.times <= horizon + 1e-12)


def make_split(series: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    """Return ``(train, test)``; reconstruction returns the same object twice."""
    if spec.kind == "reconstruction":
        train = _window(series, spec.train_horizon)
        if len(train) < 2:
            raise DataError("reconstruction needs at least two points")
        return train, train
    if spec.kind == "extrapolation":
        train = _window(series, spec.train_horizon)
        test = _window(series, spec.test_horizon)
        if len(train) < 2 or test.times[-1] <= train.times[-1]:
            raise DataError("extrapolation needs a test window beyond the training horizon")
        if spec.test_count is not None and spec.test_count < len(test):
            idx = np.unique(np.round(np.linspace(0, len(test) - 1, spec.test_count)).astype(int))
            test = test.subset(idx)
        return train, test
    window = _window(series, spec.train_horizon)
    pos = np.arange(len(window)) % spec.stride
    train_mask = pos < spec.train_per_block
    if train_mask.sum() < 2 or (~train_mask).sum() < 1:
        raise DataError("completion split needs at least two training and one test point")
    return window.subset(train_mask), window.subset(~train_mask)


def write_series_csv(series: TimeSeries, path) -> None:
    cols = ["t"] + (["x"] if series.d == 1 else [f"x{i}" for i in range(series.d)])
    lines = [",".join(cols)]
    for t, row in zip(series.times, series.values):
        lines.append(",".join(f"{v:.17g}" for v in (t, *row)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path) -> TimeSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TimeSeries(data[:, 0], data[:, 1:])


def write_manifest(path, **fields) -> None:
    """Sidecar JSON describing how a dataset file was produced."""
    Path(path).write_text(json.dumps(fields, indent=2, sort_keys=True) + "\n")
