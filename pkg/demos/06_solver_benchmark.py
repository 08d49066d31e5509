# %% [markdown]
# Cost of memory: the fractional solver sums over the whole history at every
# step, so doubling the grid roughly quadruples the time. Euler just doubles.

# %%
from nfde import benchmark_solvers

rows = benchmark_solvers([200, 400, 800], repeats=2)
for r in rows:
    print(f"{r.solver:14s} N={r.n_steps:4d}  {r.mean_seconds * 1e3:8.2f} ms  peak {r.peak_bytes / 1024:7.1f} KiB")

# %%
by = {(r.solver, r.n_steps): r.mean_seconds for r in rows}
for solver in ("pc_fractional", "euler_ode"):
    print(solver, "time ratio 800/400:", round(by[solver, 800] / by[solver, 400], 2))
