"""Multi-day sample sets: simulation, per-day sampling, chronological splits and planted labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from lobsrv.features.sampling import OrderSample, SamplingReport, agent_statistics, draw_samples
from lobsrv.features.snapshot import VI_INDEX
from lobsrv.market.session import SimConfig, run_session

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


def day_seed(master: int, day: int, stage: int = 0) -> int:
    """Independent per-(stage, day) seed derived from the master seed."""
    return int(np.random.SeedSequence([master, stage, day]).generate_state(1)[0])


def simulate_days(config: SimConfig, n_days: int, seed: int) -> list[list]:
    return [run_session(config, day_seed(seed, d, stage=1)).events for d in range(n_days)]


def sample_days(streams: Sequence[Sequence], session_end: float, per_day_quota: int = 100, lookback: int = 50, seed: int = 0) -> tuple[list[list[OrderSample]], list[SamplingReport]]:
    """Per-day samples; agent ratios are measured once over every stream."""
    stats = agent_statistics(streams)
    days, reports = [], []
    for d, events in enumerate(streams):
        samples, rep = draw_samples(events, session_end, stats, per_day_quota, lookback, day_seed(seed, d, stage=2), day=d)
        days.append(samples)
        reports.append(rep)
    return days, reports


@dataclass
class Splits:
    train: list[OrderSample]
    validation: list[OrderSample]
    test: list[OrderSample]
    days: tuple[range, range, range]


def chronological_split(days: Sequence[Sequence[OrderSample]], fractions=SPLIT_FRACTIONS) -> Splits:
    """Whole days go to train, then validation, then test, in calendar order."""
    n = len(days)
    if n < 3:
        raise ValueError(f"need at least 3 days for a train/validation/test split, got {n}")
    f = np.asarray(fractions, dtype=np.float64)
    n_train = max(1, int(round(n * f[0] / f.sum())))
    n_val = max(1, int(round(n * f[1] / f.sum())))
    n_train = min(n_train, n - 2)
    n_val = min(n_val, n - n_train - 1)
    r_train, r_val, r_test = range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, n)
    pick = lambda r: [s for d in r for s in days[d]]  # noqa: E731
    return Splits(pick(r_train), pick(r_val), pick(r_test), (r_train, r_val, r_test))


@dataclass(frozen=True)
class PlantedLaw:
    """Weibull fill law with ``log lambda = log_scale + beta_queue * q + beta_vi * VI``.

    ``VI`` is the level-1 volume imbalance in the last snapshot before t0.
    Censoring is independent exponential with the given rate.
    """

    log_scale: float = -1.0
    beta_queue: float = 0.25
    beta_vi: float = 1.0
    shape: float = 1.5
    censor_rate: float = 0.15

    def log_lambda(self, sample: OrderSample) -> float:
        return self.log_scale + self.beta_queue * sample.queue + self.beta_vi * float(sample.lob[-1, VI_INDEX])


def plant_labels(samples: Sequence[OrderSample], law: PlantedLaw, seed: int) -> list[OrderSample]:
    """Replace each sample's outcome with a draw from ``law``; features are left untouched."""
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        lam = np.exp(law.log_lambda(s))
        fill = lam * rng.weibull(law.shape)
        cens = rng.exponential(1.0 / law.censor_rate) if law.censor_rate > 0 else np.inf
        out.append(replace(s, duration=float(min(fill, cens)), delta=int(fill <= cens)))
    return out
