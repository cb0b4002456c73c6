"""Weibull survival law parameterised by ``log lambda`` (scale) and ``log k`` (shape)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lobsrv import tensor as T
from lobsrv.tensor import DomainError, Tensor


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise DomainError("survival time must be non-negative")
    return t


def _log_ratio(t: np.ndarray, log_lam) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(t) - log_lam


def log_survival(t, log_lam, log_k) -> np.ndarray:
    """``log S(t) = -(t / lambda) ** k``."""
    t = _check_t(t)
    z = _log_ratio(t, log_lam)
    return -np.exp(np.exp(log_k) * z)


def survival(t, log_lam, log_k) -> np.ndarray:
    return np.exp(log_survival(t, log_lam, log_k))


def log_density(t, log_lam, log_k) -> np.ndarray:
    """``log f(t) = log k - log lambda + (k - 1) log(t / lambda) - (t / lambda) ** k``."""
    t = _check_t(t)
    z = _log_ratio(t, log_lam)
    k = np.exp(log_k)
    with np.errstate(invalid="ignore"):
        return log_k - log_lam + (k - 1.0) * z - np.exp(k * z)


def density(t, log_lam, log_k) -> np.ndarray:
    return np.exp(log_density(t, log_lam, log_k))


@dataclass
class WeibullParams:
    log_lambda: np.ndarray
    log_k: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    @property
    def shape(self) -> np.ndarray:
        return np.exp(self.log_k)

    def __len__(self) -> int:
        return np.size(self.log_lambda)

    def survival(self, t) -> np.ndarray:
        return survival(t, self.log_lambda, self.log_k)

    def density(self, t) -> np.ndarray:
        return density(t, self.log_lambda, self.log_k)

    def log_survival(self, t) -> np.ndarray:
        return log_survival(t, self.log_lambda, self.log_k)

    def log_density(self, t) -> np.ndarray:
        return log_density(t, self.log_lambda, self.log_k)


def tensor_log_terms(t: np.ndarray, log_lam: Tensor, log_k: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable ``(log f(t), log S(t))`` for strictly positive ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise DomainError("log-density needs strictly positive durations")
    z = np.log(t) - log_lam
    k = T.exp(log_k)
    cum_hazard = T.exp(k * z)
    log_s = -cum_hazard
    log_f = log_k - log_lam + (k - 1.0) * z - cum_hazard
    return log_f, log_s
