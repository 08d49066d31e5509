# %% [markdown]
# Reading a price-style CSV: dates become day offsets, bad rows are skipped,
# and the series is min-max scaled before training.

# %%
from pathlib import Path

from nfde import load_csv, normalize

Path("prices.csv").write_text(
    "Date,Open,Close\n"
    "2021-01-04,10.0,10.5\n"
    "2021-01-05,10.4,10.1\n"
    "2021-01-06,N/A,10.0\n"
    "2021-01-08,9.8,10.2\n"
    "2021-01-07,10.1,9.9\n"
)
loaded = load_csv("prices.csv", "Date", "Open")
print("times (days since", loaded.origin, "):", loaded.series.times)
print("values:", loaded.series.values[:, 0])
print("skipped rows:", loaded.skipped)

# %%
scaled, stats = normalize(loaded.series)
print("scaled:", scaled.values[:, 0], "using min", stats.lo, "max", stats.hi)

# %% [markdown]
# A completion split keeps two of every three points for training.

# %%
from nfde import SplitSpec, make_split

train, test = make_split(scaled, SplitSpec("completion", stride=3, train_per_block=2))
print("train times", train.times, "test times", test.times)
