"""Fixed-step integrators: the fractional Adams predictor-corrector and explicit Euler.

All solvers accept a right-hand side ``rhs(t, h)`` returning a vector of the
same dimension as the state.  When ``alpha`` or the right-hand side involve
taped :class:`~nfde.autodiff.Var` values, every arithmetic step lands on the
tape; the untaped path runs the identical numpy operations.
"""
from __future__ import annotations

import math
import statistics
import timeit
import tracemalloc
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .numerics import DomainError

__all__ = [
    "TimeGrid",
    "Trajectory",
    "SolverError",
    "predictor_weights",
    "corrector_weights",
    "fde_solve_pc",
    "ode_solve_euler",
    "ode_solve_rk4",
    "read_at_observations",
    "benchmark_solvers",
]

RhsFn = Callable[[float, object], object]


class SolverError(ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @classmethod
    def spanning(cls, t0: float, tf: float, dt: float) -> "TimeGrid":
        """Smallest grid with step ``dt`` whose last node reaches ``tf``."""
        n = math.ceil((tf - t0) / dt - 1e-9)
        return cls(float(t0), float(dt), max(n, 0))

    def node(self, m: int) -> float:
        return self.t0 + m * self.dt

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.dt

    @property
    def t_end(self) -> float:
        return self.node(self.n_steps)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: list
    rhs_history: list

    @property
    def values(self) -> np.ndarray:
        """States as an ``(n_steps + 1, d)`` array (taped values unwrapped)."""
        return np.array([np.asarray(ad.value_of(s), dtype=float) for s in self.states])

    def to_csv(self, path) -> None:
        vals = self.values
        d = vals.shape[1]
        header = "t," + ",".join(f"y{i}" for i in range(d))
        rows = [header]
        for t, row in zip(self.grid.nodes, vals):
            rows.append(",".join(f"{x:.17g}" for x in (t, *row)))
        Path(path).write_text("\n".join(rows) + "\n")


def _check_alpha(alpha) -> float:
    a = float(ad.value_of(alpha))
    if not (0.0 < a <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {a}")
    return a


def _predictor_kernel(n_max: int, alpha, dt: float):
    # entry k is the predictor weight for lag k = n - j
    k = np.arange(n_max + 1, dtype=float)
    diff = ad.sub(ad.pow_base(k + 1.0, alpha), ad.pow_base(k, alpha))
    return ad.mul(ad.div(ad.pow_base(dt, alpha), alpha), diff)


def _corrector_kernel(n_max: int, alpha):
    # entry k is a_{j,n+1} for lag k = n - j with 1 <= j <= n
    k = np.arange(max(n_max, 1), dtype=float)
    ap1 = ad.add(alpha, 1.0)
    return ad.sub(
        ad.add(ad.pow_base(k + 2.0, ap1), ad.pow_base(k, ap1)),
        ad.mul(2.0, ad.pow_base(k + 1.0, ap1)),
    )


def _corrector_first(n_max: int, alpha):
    # a_{0,n+1} for n = 0..n_max
    n = np.arange(n_max + 1, dtype=float)
    ap1 = ad.add(alpha, 1.0)
    return ad.sub(ad.pow_base(n, ap1), ad.mul(ad.sub(n, alpha), ad.pow_base(n + 1.0, alpha)))


def predictor_weights(n: int, alpha: float, dt: float) -> np.ndarray:
    """Predictor weights ``b[0..n]`` for the step from ``t_n`` to ``t_{n+1}``."""
    _check_alpha(alpha)
    if n < 0 or dt <= 0:
        raise DomainError("need n >= 0 and dt > 0")
    return np.asarray(_predictor_kernel(n, alpha, dt))[::-1].copy()


def corrector_weights(n: int, alpha: float) -> np.ndarray:
    """Corrector weights ``a[0..n+1]``; the last entry multiplies the predicted slope."""
    _check_alpha(alpha)
    if n < 0:
        raise DomainError("need n >= 0")
    first = np.asarray(_corrector_first(n, alpha))[n]
    inner = np.asarray(_corrector_kernel(n, alpha))[: n][::-1]
    return np.concatenate([[first], inner, [1.0]])


def _as_state(y0) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    if y.ndim != 1:
        raise ValueError("initial condition must be a vector")
    return y


def _check_finite(x, step: int) -> None:
    if not np.all(np.isfinite(ad.value_of(x))):
        raise SolverError(f"non-finite state at step {step}", step)


def _eval(rhs: RhsFn, t: float, h, d: int, step: int):
    f = rhs(t, h)
    if not isinstance(f, ad.Var):
        f = np.atleast_1d(np.asarray(f, dtype=float))
    if np.shape(ad.value_of(f)) != (d,):
        raise ValueError(f"rhs returned shape {np.shape(ad.value_of(f))}, expected ({d},)")
    _check_finite(f, step)
    return f


def fde_solve_pc(rhs: RhsFn, alpha, y0, grid: TimeGrid, corrector_iters: int = 1) -> Trajectory:
    """Solve the Caputo problem ``D^alpha y = rhs(t, y)``, ``y(t0) = y0`` on ``grid``.

    Fractional Adams-Bashforth-Moulton in P(EC)^k E form: a rectangle-rule
    predictor over the full history (``predictor_weights`` scaled by
    ``1 / Gamma(alpha)``), ``corrector_iters`` trapezoidal
    corrections with prefactor ``dt**alpha / Gamma(alpha + 2)``, and a final
    slope evaluation at the corrected state that joins the history.

    ``alpha`` may be a taped Var, in which case all weights are taped too.
    """
    _check_alpha(alpha)
    if corrector_iters < 1:
        raise ValueError("corrector_iters must be >= 1")
    y0 = _as_state(y0)
    d = y0.size
    n_steps = grid.n_steps
    dt = grid.dt
    f0 = _eval(rhs, grid.t0, y0, d, 0)
    states: list = [y0]
    history: list = [f0]
    if n_steps == 0:
        return Trajectory(grid, states, history)

    b_kernel = _predictor_kernel(n_steps - 1, alpha, dt)
    a_kernel = _corrector_kernel(n_steps - 1, alpha)
    a_first = _corrector_first(n_steps - 1, alpha)
    scale = ad.div(ad.pow_base(dt, alpha), ad.gamma_fn(ad.add(alpha, 2.0)))
    # the b weights integrate the kernel alone; the Volterra form carries 1/Gamma(alpha)
    b_kernel = ad.div(b_kernel, ad.gamma_fn(alpha))

    for n in range(n_steps):
        t_next = grid.node(n + 1)
        lags = np.arange(n, -1, -1)
        b = ad.take(b_kernel, lags)
        pred = ad.add(y0, ad.weighted_sum(b, history))
        _check_finite(pred, n + 1)

        # sum_{j=0}^{n} a_{j,n+1} f_j
        known = ad.mul(ad.take(a_first, n), history[0])
        if n > 0:
            known = ad.add(known, ad.weighted_sum(ad.take(a_kernel, lags[1:]), history[1:]))

        guess = pred
        for _ in range(corrector_iters):
            f_guess = _eval(rhs, t_next, guess, d, n + 1)
            guess = ad.add(y0, ad.mul(scale, ad.add(known, f_guess)))
            _check_finite(guess, n + 1)
        states.append(guess)
        history.append(_eval(rhs, t_next, guess, d, n + 1))
    return Trajectory(grid, states, history)


def ode_solve_euler(rhs: RhsFn, y0, grid: TimeGrid) -> Trajectory:
    """Forward Euler: ``y[m+1] = y[m] + dt * rhs(t_m, y[m])``."""
    y = _as_state(y0)
    d = y.size
    states: list = [y]
    history: list = []
    for m in range(grid.n_steps):
        f = _eval(rhs, grid.node(m), y, d, m)
        history.append(f)
        y = ad.add(y, ad.mul(grid.dt, f))
        _check_finite(y, m + 1)
        states.append(y)
    history.append(_eval(rhs, grid.t_end, y, d, grid.n_steps))
    return Trajectory(grid, states, history)


def ode_solve_rk4(rhs: RhsFn, y0, grid: TimeGrid) -> Trajectory:
    """Classical four-stage Runge-Kutta, for accurate reference data on ODE problems."""
    y = _as_state(y0)
    d = y.size
    h = grid.dt
    states: list = [y]
    history: list = []
    for m in range(grid.n_steps):
        t = grid.node(m)
        k1 = _eval(rhs, t, y, d, m)
        k2 = _eval(rhs, t + h / 2, ad.add(y, ad.mul(h / 2, k1)), d, m)
        k3 = _eval(rhs, t + h / 2, ad.add(y, ad.mul(h / 2, k2)), d, m)
        k4 = _eval(rhs, t + h, ad.add(y, ad.mul(h, k3)), d, m)
        incr = ad.add(ad.add(k1, ad.mul(2.0, k2)), ad.add(ad.mul(2.0, k3), k4))
        history.append(k1)
        y = ad.add(y, ad.mul(h / 6, incr))
        _check_finite(y, m + 1)
        states.append(y)
    history.append(_eval(rhs, grid.t_end, y, d, grid.n_steps))
    return Trajectory(grid, states, history)


def read_at_observations(traj: Trajectory, obs_times: Sequence[float]) -> list:
    """Trajectory values at ``obs_times``.

    Times within ``1e-9 * dt`` of a grid node take the node value exactly;
    other times interpolate linearly between the bracketing nodes.
    """
    grid = traj.grid
    tol = grid.dt * 1e-9
    out = []
    for t in obs_times:
        t = float(t)
        if t < grid.t0 - tol or t > grid.t_end + tol:
            raise DomainError(f"observation time {t} outside [{grid.t0}, {grid.t_end}]")
        pos = (t - grid.t0) / grid.dt
        m = int(round(pos))
        if abs(t - grid.node(m)) <= tol:
            out.append(traj.states[min(max(m, 0), grid.n_steps)])
            continue
        lo = int(math.floor(pos))
        w = pos - lo
        out.append(ad.add(ad.mul(1.0 - w, traj.states[lo]), ad.mul(w, traj.states[lo + 1])))
    return out


@dataclass
class BenchmarkRow:
    solver: str
    n_steps: int
    mean_seconds: float
    std_seconds: float
    peak_bytes: int
    best_seconds: float = math.nan  # fastest repeat, the least noisy estimate of solver cost


def _decay(t, y):
    return -y


def benchmark_solvers(
    sizes: Sequence[int] = (),
    repeats: int = 3,
    alpha: float = 0.6,
    t_end: float = 20.0,
    include_default: bool = True,
) -> list[BenchmarkRow]:
    """Wall time and peak traced allocation of both solvers on ``D^alpha y = -y``, ``y(0) = 1``.

    The Euler column solves the classical ``y' = -y`` on the same grid.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    all_sizes = ([100] if include_default else []) + [int(n) for n in sizes]
    configs = []
    for n in all_sizes:
        grid = TimeGrid(0.0, t_end / n, n)
        configs.append(("pc_fractional", n, lambda grid=grid: fde_solve_pc(_decay, alpha, [1.0], grid)))
        configs.append(("euler_ode", n, lambda grid=grid: ode_solve_euler(_decay, [1.0], grid)))

    # timeit sizes each sample to >= 0.2 s and keeps the collector off while timing
    timers = []
    for _, _, run in configs:
        run()  # warm-up
        timer = timeit.Timer(run)
        timers.append((timer, timer.autorange()[0]))
    # rounds visit every configuration in turn, so slow spells on a shared
    # machine hit all sizes alike instead of skewing one of them
    samples: list[list[float]] = [[] for _ in configs]
    for _ in range(repeats):
        for k, (timer, loops) in enumerate(timers):
            samples[k].append(timer.timeit(loops) / loops)

    rows = []
    for (name, n, run), times in zip(configs, samples):
        tracemalloc.start()
        run()
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        std = statistics.pstdev(times) if len(times) > 1 else 0.0
        rows.append(BenchmarkRow(name, n, statistics.fmean(times), std, peak, min(times)))
    return rows
