# %% [markdown]
# Logistic growth with a fractional order, then an extrapolation split:
# train on [0, 39], test up to t = 59.

# %%
from nfde import SplitSpec, TimeGrid, TrainConfig, evaluate, gen_pg, make_split, normalize, train

series = gen_pg(0.5, grid=TimeGrid(0.0, 1.0, 59))
print("population from", series.values[0, 0], "to", round(series.values[-1, 0], 2))

train_raw, test_raw = make_split(series, SplitSpec("extrapolation", train_horizon=39.0, test_horizon=59.0, test_count=20))
train_n, stats = normalize(train_raw)
test_n, _ = normalize(test_raw, stats)  # test reuses the training scale
print(len(train_n), "training points,", len(test_n), "test points")

# %%
model, history = train(train_n, TrainConfig(max_iters=40, hidden=(32, 32)))
print("train loss", history.final_loss, "test MSE", evaluate(model, test_n), "alpha", model.realized_alpha)

# %% [markdown]
# A finer solver step than the data spacing: observations are then read off
# every other node (or interpolated when they fall between nodes).

# %%
fine_model, fine_history = train(train_n, TrainConfig(max_iters=40, hidden=(32, 32), solver_dt=0.5))
print("dt = 0.5: train loss", fine_history.final_loss, "test MSE", evaluate(fine_model, test_n))
