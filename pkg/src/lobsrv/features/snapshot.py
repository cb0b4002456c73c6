"""The 24-value order-book snapshot seen from one side of the market."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lobsrv.market.book import ASK, BID, OrderBook, opposite

N_LEVELS = 5
LOB_FEATURES = [
    f"{kind}{lvl}_{where}"
    for lvl in range(1, N_LEVELS + 1)
    for kind, where in (("p", "same"), ("v", "same"), ("p", "opp"), ("v", "opp"))
] + ["volatility", "spread", "volume_imbalance", "time_of_day"]
LOB_WIDTH = len(LOB_FEATURES)
VI_INDEX = LOB_FEATURES.index("volume_imbalance")


class SnapshotUnavailable(ValueError):
    """One side of the book is empty."""


class RollingVolatility:
    """Mean squared log-return of the mid price sampled at trades.

    Averages over the last ``window`` trades, or all trades seen so far during
    warm-up; zero before the first trade.
    """

    def __init__(self, window: int = 1000):
        self.window = window
        self._returns: deque = deque()
        self._sum = 0.0
        self._anchor: Optional[float] = None

    def observe(self, mid_before: Optional[float], mid_after: Optional[float], traded: bool) -> None:
        if self._anchor is None and mid_before is not None:
            self._anchor = mid_before
        if not traded or mid_after is None or self._anchor is None:
            return
        r2 = math.log(mid_after / self._anchor) ** 2
        self._anchor = mid_after
        self._returns.append(r2)
        self._sum += r2
        if len(self._returns) > self.window:
            self._sum -= self._returns.popleft()

    @property
    def value(self) -> float:
        if not self._returns:
            return 0.0
        return max(self._sum, 0.0) / len(self._returns)


@dataclass(frozen=True)
class SnapshotContext:
    volatility: float = 0.0
    time_of_day: float = 0.0


def _side_levels(book: OrderBook, side: str, mid: float) -> list[tuple[float, float]]:
    levels = book.depth(side, N_LEVELS)
    out = []
    cum = 0
    for price, vol in levels:
        cum += vol
        out.append((abs(price - mid), float(cum)))
    while len(out) < N_LEVELS:
        dist, cum_v = out[-1]
        out.append((dist + 1.0, cum_v))
    return out


def snapshot_features(book: OrderBook, studied_side: str, context: SnapshotContext = SnapshotContext()) -> np.ndarray:
    """Price distances from mid (ticks), cumulative volumes and derived statistics."""
    if not book.bids or not book.asks:
        raise SnapshotUnavailable("empty book side")
    mid = book.mid()
    same = _side_levels(book, studied_side, mid)
    opp = _side_levels(book, opposite(studied_side), mid)
    vec = np.empty(LOB_WIDTH)
    for lvl in range(N_LEVELS):
        vec[4 * lvl : 4 * lvl + 4] = (same[lvl][0], same[lvl][1], opp[lvl][0], opp[lvl][1])
    v_same, v_opp = same[0][1], opp[0][1]
    vec[20] = context.volatility
    vec[21] = float(book.best_ask - book.best_bid)
    vec[22] = (v_same - v_opp) / (v_same + v_opp)
    vec[23] = context.time_of_day
    return vec


def orient(bid_view: np.ndarray, side: str) -> np.ndarray:
    """Turn a bid-as-same-side snapshot (the stream convention) into ``side``'s view."""
    v = np.array(bid_view, dtype=np.float64, copy=True)
    if side == BID:
        return v
    if side != ASK:
        raise ValueError(f"bad side {side!r}")
    per_level = v[..., :20].reshape(v.shape[:-1] + (N_LEVELS, 2, 2))
    v[..., :20] = per_level[..., ::-1, :].reshape(v.shape[:-1] + (20,))
    v[..., VI_INDEX] = -v[..., VI_INDEX]
    return v
