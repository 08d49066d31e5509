# %% [markdown]
# Learn the relaxation dynamics from 50 samples with a small neural FDE.
# alpha starts at 0.99 and is trained together with the network.

# %%
import numpy as np

from nfde import TimeGrid, TrainConfig, evaluate, gen_ro, normalize, predict, train

series = gen_ro(0.99, 0.3, TimeGrid(0.0, 20 / 49, 49))
data, stats = normalize(series)
model, history = train(data, TrainConfig(max_iters=60, seed=0))

print("loss at iteration 0:", history.losses[0])
print("loss after training:", history.final_loss)
print("learned alpha:", model.realized_alpha)

# %%
traj = predict(model, tf=30.0)
print("prediction reaches t =", traj.grid.t_end, "final normalised state", traj.values[-1, 0])
print("reconstruction MSE:", evaluate(model, data))

# %% [markdown]
# The same loss history as an SVG, next to a neural ODE baseline.

# %%
from nfde import emit_loss_plot

_, node_history = train(data, TrainConfig(max_iters=60, seed=0, solver="euler_ode"))
print(emit_loss_plot([("Neural FDE", history), ("Neural ODE", node_history)], "relaxation_loss.svg"))
