"""Neural fractional differential equations on a small reverse-mode autodiff engine."""
from .autodiff import Tape, Var, grad_check
from .data import SplitSpec, TimeSeries, gen_pg, gen_ro, load_csv, make_split, normalize, denormalize
from .harness import ExperimentSpec, emit_loss_plot, emit_report, run_experiment
from .neuralfde import LossHistory, TrainConfig, TrainedModel, evaluate, predict, train
from .nn import AlphaParam, MlpConfig, mlp_init
from .numerics import gamma, linear_interp, mittag_leffler
from .solvers import TimeGrid, Trajectory, benchmark_solvers, fde_solve_pc, ode_solve_euler, read_at_observations

__version__ = "0.1.0"
