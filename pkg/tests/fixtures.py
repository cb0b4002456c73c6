"""Random censored evaluation sets shared by the metric tests and the acceptance run."""

import numpy as np

from lobsrv.features.dataset import PlantedLaw, plant_labels
from lobsrv.features.sampling import OrderSample


def censored_fixture(rng: np.random.Generator, n: int, tie_grid: float | None = None):
    """Durations, event flags and per-horizon survival predictions with a few ties.

    Returns ``(T, d, grid, surv)`` where ``surv[h, i]`` is non-increasing in h.
    """
    T = rng.exponential(2.0, size=n) + 0.05
    if tie_grid is not None:
        T = np.round(T / tie_grid) * tie_grid + tie_grid
    d = (rng.random(n) < 0.65).astype(float)
    d[0] = 1.0
    grid = np.sort(rng.uniform(T.min(), T.max(), size=4))
    drops = rng.uniform(0, 0.3, size=(len(grid), n))
    surv = np.clip(1.0 - np.cumsum(drops, axis=0), 0.0, 1.0)
    # a couple of exact risk ties
    surv[:, 1] = surv[:, 2]
    return T, d, grid, surv


def synthetic_days(n_days: int, per_day: int, lookback: int = 8, seed: int = 0):
    """Days of random order samples whose labels follow the planted Weibull law."""
    rng = np.random.default_rng(seed)
    days = []
    for day in range(n_days):
        raw = []
        for _ in range(per_day):
            actions = np.column_stack([rng.integers(0, 7, lookback), rng.uniform(0, 1, (lookback, 5))])
            lob = rng.normal(size=(lookback, 24))
            lob[:, 22] = rng.uniform(-1, 1, lookback)
            raw.append(OrderSample(actions, lob, int(rng.integers(0, 8)), 0.0, 1.0, 0, "bid", day=day))
        days.append(plant_labels(raw, PlantedLaw(), seed=seed * 1000 + day))
    return days
