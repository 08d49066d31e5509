# %% [markdown]
# Fractional predictor-corrector on the relaxation problem D^a y = 1 - y.
# The exact answer is 1 + (y0 - 1) E_a(-t^a), so we can watch the error shrink.

# %%
import math

from nfde import TimeGrid, fde_solve_pc, mittag_leffler

y0 = 0.3
for alpha in (0.5, 0.8, 1.0):
    exact = 1 + (y0 - 1) * mittag_leffler(alpha, -1.0)
    errs = []
    for n in (64, 128, 256, 512):
        traj = fde_solve_pc(lambda t, y: 1 - y, alpha, [y0], TimeGrid(0.0, 1 / n, n))
        errs.append(abs(traj.values[-1, 0] - exact))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    print(f"alpha={alpha}: y(1)={exact:.6f}")
    print("   errors", " ".join(f"{e:.2e}" for e in errs))
    print("   orders", " ".join(f"{o:.2f}" for o in orders))

# %% [markdown]
# With alpha = 1 the scheme is the ordinary trapezoid predictor-corrector,
# so y' = -y lands on e^-1 with second-order error.

# %%
traj = fde_solve_pc(lambda t, y: -y, 1.0, [1.0], TimeGrid(0.0, 0.01, 100))
print("alpha=1, y(1) =", traj.values[-1, 0], "vs", math.exp(-1))

# %% [markdown]
# Memory: a fractional solve remembers the whole past, an ordinary one does not.
# Kick the right-hand side once at t = 0.3 and compare later states.

# %%
import numpy as np

grid = TimeGrid(0.0, 0.1, 20)
for alpha in (0.6, 1.0):
    base = fde_solve_pc(lambda t, y: -y, alpha, [1.0], grid).values[:, 0]
    kicked = fde_solve_pc(lambda t, y: -y + (1.0 if abs(t - 0.3) < 1e-9 else 0.0), alpha, [1.0], grid).values[:, 0]
    print(f"alpha={alpha}: effect of the kick at t=1.0, 2.0 ->", np.round(kicked[[10, 20]] - base[[10, 20]], 5))
