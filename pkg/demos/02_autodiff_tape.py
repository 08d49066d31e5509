# %% [markdown]
# The reverse-mode tape records array operations and replays them backwards.
# Untaped calls return plain numpy values, so the same code runs both ways.

# %%
import numpy as np

from nfde import autodiff as ad
from nfde.autodiff import Tape, grad_check

tape = Tape()
x = tape.parameter(np.array([0.5, -1.0, 2.0]), "x")
y = ad.total(ad.mul(ad.tanh(x), ad.exp(x)))
grads = tape.backward(y)
print("y =", ad.value_of(y))
print("dy/dx =", grads.wrt(x))
print("by hand =", (1 - np.tanh(x.value) ** 2) * np.exp(x.value) + np.tanh(x.value) * np.exp(x.value))

# %% [markdown]
# Gradients flow through a whole fractional solve, including the order alpha.

# %%
from nfde import TimeGrid, fde_solve_pc


def loss(v):
    alpha = ad.sigmoid(ad.take(v, 0))
    traj = fde_solve_pc(lambda t, y: ad.mul(ad.take(v, 1), ad.sub(1.0, y)), alpha, [0.3], TimeGrid(0.0, 0.1, 10))
    return ad.total(ad.mul(traj.states[-1], traj.states[-1]))


params = np.array([1.5, 0.8])
print("max relative error vs finite differences:", grad_check(loss, params, eps=1e-6))
