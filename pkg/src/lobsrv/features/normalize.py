"""Z-scoring of continuous inputs with statistics from the training split only."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from lobsrv.features.sampling import OrderSample

MIN_STD = 1e-12


@dataclass(frozen=True)
class NormalizationStats:
    lob_mean: np.ndarray
    lob_std: np.ndarray
    ratio_mean: np.ndarray
    ratio_std: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "lob_mean": self.lob_mean,
            "lob_std": self.lob_std,
            "ratio_mean": self.ratio_mean,
            "ratio_std": self.ratio_std,
        }

    @classmethod
    def from_dict(cls, d) -> "NormalizationStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("lob_mean", "lob_std", "ratio_mean", "ratio_std")))


def fit_normalizer(samples: Sequence[OrderSample]) -> NormalizationStats:
    """Column statistics over every lookback row of every training sample.

    Constant columns get mean 0 and std 1 so they pass through unchanged.
    """
    if len(samples) < 2:
        raise ValueError("need at least two training samples to fit a normalizer")
    lob = np.concatenate([s.lob for s in samples])
    ratios = np.concatenate([s.actions[:, 1:] for s in samples])
    return NormalizationStats(*_moments(lob), *_moments(ratios))


def _moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    const = sd < MIN_STD * np.maximum(1.0, np.abs(mu))
    mu = np.where(const, 0.0, mu)
    sd = np.where(const, 1.0, sd)
    return mu, sd


def apply_normalizer(stats: NormalizationStats, sample: OrderSample) -> OrderSample:
    """Scaled copy of ``sample``; action codes, queue and labels are untouched."""
    actions = sample.actions.copy()
    actions[:, 1:] = (actions[:, 1:] - stats.ratio_mean) / stats.ratio_std
    lob = (sample.lob - stats.lob_mean) / stats.lob_std
    return replace(sample, actions=actions, lob=lob)


def normalize_all(stats: NormalizationStats, samples: Sequence[OrderSample]) -> list[OrderSample]:
    return [apply_normalizer(stats, s) for s in samples]
