"""Training and prediction for Neural FDEs and the Neural ODE baseline.

A model is a dense network ``f_theta`` for the right-hand side plus, for the
fractional model, a bounded derivative order.  Training solves the
initial value problem on a fixed grid under a fresh tape each iteration,
reads the solution at the observation times, and takes one Adam step on
the MSE against the observations.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape
from .data import NormStats, TimeSeries
from .nn import (
    AdamState,
    _open_unit,
    AlphaParam,
    Mlp,
    MlpConfig,
    adam_step,
    alpha_value,
    load_model,
    mlp_forward,
    mlp_init,
    mse_loss,
    save_model,
)
from .solvers import (
    SolverError,
    TimeGrid,
    Trajectory,
    fde_solve_pc,
    ode_solve_euler,
    read_at_observations,
)

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "LossHistory",
    "TrainingError",
    "LossProblem",
    "train",
    "predict",
    "evaluate",
    "observation_spacing",
]

log = logging.getLogger(__name__)

SOLVERS = ("pc_fractional", "euler_ode")
DIVERGENCE_LIMIT = 1e6


class TrainingError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TrainConfig:
    max_iters: int = 200
    lr: float = 1e-3
    seed: int = 0
    solver: str = "pc_fractional"
    solver_dt: float | None = None  # None: match the observation spacing
    alpha_mode: str = "scalar_logit"  # scalar_logit | tiny_net | fixed
    alpha_init: float = 0.99
    alpha_fixed: float | None = None
    runs: int = 3
    hidden: tuple[int, ...] = (64, 64)
    time_input: bool = False
    corrector_iters: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.alpha_init < 1.0):
            raise ValueError("alpha_init must lie in (0, 1)")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.alpha_mode not in ("scalar_logit", "tiny_net", "fixed"):
            raise ValueError(f"unknown alpha mode {self.alpha_mode!r}")
        if self.alpha_mode == "fixed" and self.alpha_fixed is None:
            raise ValueError("fixed alpha mode needs alpha_fixed")
        if self.solver_dt is not None and not self.solver_dt > 0:
            raise ValueError("solver_dt must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TrainedModel:
    f_net: Mlp
    alpha: AlphaParam | None
    x0: np.ndarray
    t0: float
    dt: float
    solver: str = "pc_fractional"
    time_input: bool = False
    corrector_iters: int = 1
    norm: NormStats | None = None

    @property
    def realized_alpha(self) -> float | None:
        if self.alpha is None:
            return None
        return float(alpha_value(self.alpha))

    def save(self, path) -> None:
        extras = {
            "x0": self.x0,
            "t0": [self.t0],
            "dt": [self.dt],
            "solver": self.solver,
            "time_input": str(int(self.time_input)),
            "corrector_iters": str(self.corrector_iters),
        }
        if self.norm is not None:
            extras["norm_lo"] = self.norm.lo
            extras["norm_hi"] = self.norm.hi
        save_model(path, self.f_net, self.alpha, extras)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        f_net, alpha, ex = load_model(path)
        norm = None
        if "norm_lo" in ex:
            norm = NormStats(np.array(ex["norm_lo"], float), np.array(ex["norm_hi"], float))
        return cls(
            f_net,
            alpha,
            np.array(ex["x0"], dtype=float),
            float(ex["t0"][0]),
            float(ex["dt"][0]),
            ex["solver"][0],
            bool(int(ex["time_input"][0])),
            int(ex["corrector_iters"][0]),
            norm,
        )


@dataclass
class LossHistory:
    losses: list[float] = field(default_factory=list)
    alphas: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    # norm of dL/d(alpha parameters), kept apart from the theta gradient
    alpha_grad_norms: list[float | None] = field(default_factory=list)
    final_loss: float = math.nan
    failed: bool = False
    message: str = ""

    def __len__(self):
        return len(self.losses)

    def to_csv(self, path, with_seconds: bool = True) -> None:
        cols = ["iter", "loss", "alpha"] + (["seconds"] if with_seconds else [])
        lines = [",".join(cols)]
        for i, loss in enumerate(self.losses):
            a = self.alphas[i]
            row = [str(i), f"{loss:.17g}", "" if a is None else f"{a:.17g}"]
            if with_seconds:
                row.append(f"{self.seconds[i]:.6f}")
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")


def observation_spacing(times: np.ndarray) -> float:
    """Solver step matching the data: the common spacing, or the smallest gap when irregular."""
    gaps = np.diff(np.asarray(times, dtype=float))
    if gaps.size == 0:
        raise ValueError("need at least two observation times")
    if np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        return float(gaps[0])
    return float(gaps.min())


def _loss_points(series: TimeSeries, t0: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    # the state is pinned to x0 at t0, so that residual is dropped
    keep = np.abs(series.times - t0) > dt * 1e-9
    if not keep.any():
        return series.times, series.values
    return series.times[keep], series.values[keep]


class LossProblem:
    """Loss as a function of one flat parameter vector ``[theta, phi]``.

    Shared by training, gradient checks and evaluation so all three perform
    the same arithmetic.
    """

    def __init__(self, model: TrainedModel, series: TimeSeries, grid: TimeGrid | None = None):
        self.model = model
        t_last = float(series.times[-1])
        self.grid = grid or TimeGrid.spanning(model.t0, t_last, model.dt)
        self.obs_times, self.targets = _loss_points(series, model.t0, self.grid.dt)
        self._f_shapes = [a.shape for a in model.f_net.arrays()]
        self.n_theta = model.f_net.n_params
        alpha = model.alpha
        self.n_phi = 0 if alpha is None else alpha.flat().size
        self._alpha_shapes = [a.shape for a in alpha.net.arrays()] if alpha is not None and alpha.mode == "tiny_net" else []

    def flat(self) -> np.ndarray:
        parts = [self.model.f_net.flat()]
        if self.model.alpha is not None:
            parts.append(self.model.alpha.flat())
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        self.model.f_net.set_flat(flat[: self.n_theta])
        if self.model.alpha is not None:
            self.model.alpha.set_flat(flat[self.n_theta :])

    @staticmethod
    def _split(flat, shapes, start: int):
        out = []
        pos = start
        for shape in shapes:
            size = int(np.prod(shape))
            idx = np.arange(pos, pos + size).reshape(shape)
            out.append(ad.take(flat, idx))
            pos += size
        return out

    def alpha(self, flat):
        a = self.model.alpha
        if a is None:
            return None
        if a.mode == "fixed":
            return a.fixed
        if a.mode == "scalar_logit":
            return _open_unit(ad.sigmoid(ad.take(flat, self.n_theta)))
        params = self._split(flat, self._alpha_shapes, self.n_theta)
        return _open_unit(ad.take(mlp_forward(a.net, np.array([a.alpha_in]), params), 0))

    def solve(self, flat, grid: TimeGrid | None = None) -> tuple[Trajectory, object]:
        model = self.model
        params = self._split(flat, self._f_shapes, 0)
        f_net = model.f_net

        def rhs(t, h):
            inp = ad.concat([h, np.array([t])]) if model.time_input else h
            return mlp_forward(f_net, inp, params)

        grid = grid or self.grid
        alpha = self.alpha(flat)
        if model.solver == "pc_fractional":
            traj = fde_solve_pc(rhs, alpha, model.x0, grid, model.corrector_iters)
        else:
            traj = ode_solve_euler(rhs, model.x0, grid)
        return traj, alpha

    def __call__(self, flat):
        traj, _ = self.solve(flat)
        return mse_loss(read_at_observations(traj, self.obs_times), list(self.targets))


def _init_model(dataset: TimeSeries, config: TrainConfig, dt: float, seed: int) -> TrainedModel:
    d = dataset.d
    sizes = (d + int(config.time_input), *config.hidden, d)
    f_net = mlp_init(MlpConfig(sizes, "tanh", "identity", seed))
    if config.solver == "euler_ode":
        alpha = None
    elif config.alpha_mode == "scalar_logit":
        alpha = AlphaParam.scalar(config.alpha_init)
    elif config.alpha_mode == "tiny_net":
        alpha = AlphaParam.tiny(config.alpha_init, seed=seed + 1_000_003)
    else:
        alpha = AlphaParam.constant(config.alpha_fixed)
    return TrainedModel(
        f_net,
        alpha,
        np.array(dataset.values[0], dtype=float),
        float(dataset.times[0]),
        dt,
        config.solver,
        config.time_input,
        config.corrector_iters,
    )


def train(
    dataset: TimeSeries, config: TrainConfig, norm: NormStats | None = None
) -> tuple[TrainedModel, LossHistory]:
    """Fit a model to ``dataset`` by full-batch Adam through the solver.

    The first observation is the initial condition.  Returns the model after
    the last update and a per-iteration history (loss before each update,
    realised alpha, wall time); ``history.final_loss`` is the loss of the
    returned model.  A run whose loss passes 1e6 is stopped and flagged
    ``failed``.
    """
    if len(dataset) < 2:
        raise ValueError("training needs at least two observations")
    dt = config.solver_dt or observation_spacing(dataset.times)
    model = _init_model(dataset, config, dt, config.seed)
    model.norm = norm
    problem = LossProblem(model, dataset)
    trainable = np.ones(problem.n_theta + problem.n_phi, dtype=bool)
    if model.alpha is not None and not model.alpha.trainable:
        trainable[problem.n_theta :] = False
    state = AdamState.zeros(int(trainable.sum()), lr=config.lr)
    history = LossHistory()
    bad_streak = 0

    for it in range(config.max_iters):
        start = time.perf_counter()
        flat = problem.flat()
        tape = Tape()
        x = tape.parameter(flat, "params")
        try:
            loss = problem(x)
            loss_value = float(ad.value_of(loss))
            alpha_now = ad.value_of(problem.alpha(flat))
            grads = np.asarray(tape.backward(loss).wrt(x), dtype=float)
        except (SolverError, NonFiniteError) as exc:
            raise TrainingError(f"iteration {it}: {exc}", it) from exc

        if not np.isfinite(loss_value) or not np.all(np.isfinite(grads)):
            bad_streak += 1
            history.losses.append(loss_value)
            history.alphas.append(None if alpha_now is None else float(alpha_now))
            history.alpha_grad_norms.append(None)
            history.seconds.append(time.perf_counter() - start)
            if bad_streak >= 3:
                raise TrainingError(f"non-finite loss for 3 consecutive iterations (last {it})", it)
            continue
        bad_streak = 0

        history.losses.append(loss_value)
        history.alphas.append(None if alpha_now is None else float(alpha_now))
        phi_grad = grads[problem.n_theta :]
        history.alpha_grad_norms.append(float(np.linalg.norm(phi_grad)) if phi_grad.size else None)
        if loss_value > DIVERGENCE_LIMIT:
            history.seconds.append(time.perf_counter() - start)
            history.failed = True
            history.message = f"loss {loss_value:.3e} exceeded {DIVERGENCE_LIMIT:.0e} at iteration {it}"
            log.warning(history.message)
            break

        new_vals, state = adam_step(state, flat[trainable], grads[trainable])
        updated = flat.copy()
        updated[trainable] = new_vals
        problem.set_flat(updated)
        if model.alpha is not None and model.alpha.mode == "tiny_net":
            # this iteration's output feeds the alpha network next iteration
            model.alpha.alpha_in = float(alpha_now)
        history.seconds.append(time.perf_counter() - start)

    history.final_loss = float(problem(problem.flat()))
    return model, history


def predict(model: TrainedModel, t0: float | None = None, tf: float | None = None, dt: float | None = None) -> Trajectory:
    """Solve with frozen parameters from ``x0`` at ``t0`` to ``tf`` (untaped)."""
    t0 = model.t0 if t0 is None else float(t0)
    dt = model.dt if dt is None else float(dt)
    if tf is None or not tf > t0:
        raise ValueError("tf must exceed t0")
    if not dt > 0:
        raise ValueError("dt must be positive")
    sub = TrainedModel(
        model.f_net, model.alpha, model.x0, t0, dt, model.solver, model.time_input, model.corrector_iters, model.norm
    )
    problem = LossProblem(sub, TimeSeries([t0, tf], np.zeros((2, model.x0.size))))
    traj, _ = problem.solve(problem.flat(), TimeGrid.spanning(t0, tf, dt))
    return traj


def evaluate(model: TrainedModel, test: TimeSeries, dt: float | None = None) -> float:
    """Test MSE in the model's (normalised) units.

    The solve runs from the model's initial time to the last test time and
    is read at the test times; a point at the initial time carries no
    information and is dropped unless it is the only one.
    """
    dt = model.dt if dt is None else float(dt)
    if test.times[0] < model.t0 - dt * 1e-9:
        raise ValueError("test times precede the model's initial time")
    sub = TrainedModel(
        model.f_net, model.alpha, model.x0, model.t0, dt, model.solver, model.time_input, model.corrector_iters, model.norm
    )
    problem = LossProblem(sub, test)
    return float(problem(problem.flat()))
