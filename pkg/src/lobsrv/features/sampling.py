"""Turn a recorded event stream into labelled order samples.

Per trading day: orders that rest at the best level right after submission
are candidates; for each we draw an observation time ``t0`` uniformly in
``[t_S, t*)`` and keep the first draw at which the order still rests at the
best level (five draws at most). Labels are recomputed by replaying the
stream; nothing is taken from the generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from lobsrv.features.snapshot import orient
from lobsrv.market.book import ACTION_CODES, EventRecord, OrderBook, apply_event

log = logging.getLogger(__name__)

MAX_DRAWS = 5
N_RATIOS = 5
ACTION_WIDTH = 1 + N_RATIOS


@dataclass
class OrderSample:
    actions: np.ndarray  # [L, 1 + 5]: action code, then the agent's five ratios
    lob: np.ndarray  # [L, 24]
    queue: int
    t0: float
    duration: float
    delta: int
    side: str
    order_id: int = -1
    day: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"non-positive duration {self.duration}")
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")
        if self.queue < 0:
            raise ValueError(f"negative queue {self.queue}")


@dataclass
class SamplingReport:
    day: int
    candidates: int
    valid: int
    kept: int
    warning: Optional[str] = None


@dataclass
class Lifecycle:
    order_id: int
    agent_id: int
    side: str
    submit_time: float
    at_best: bool
    first_fill: Optional[float] = None
    cancel: Optional[float] = None

    def end(self, session_end: float) -> tuple[float, int]:
        """``(t*, delta)``: first execution, else cancellation, else the close."""
        if self.first_fill is not None and (self.cancel is None or self.first_fill <= self.cancel):
            return self.first_fill, 1
        if self.cancel is not None:
            return self.cancel, 0
        return session_end, 0


def replay(events: Iterable[EventRecord]):
    """Re-run recorded events through a fresh book; yields ``(record, fills, book)``."""
    book = OrderBook()
    for rec in events:
        book.seq = rec.seq - 1
        _, fills, _ = apply_event(book, rec.to_intent(), rec.time)
        yield rec, fills, book


def order_lifecycles(events: Sequence[EventRecord]) -> dict[int, Lifecycle]:
    lives: dict[int, Lifecycle] = {}
    for rec, fills, book in replay(events):
        if rec.action_type in ("I", "T") and rec.price_ticks is not None:
            o = book.orders.get(rec.order_id)
            at_best = o is not None and o.price == book.best(o.side)
            lives[rec.order_id] = Lifecycle(rec.order_id, rec.agent_id, rec.side, rec.time, at_best)
        for f in fills:
            for oid in (f.maker_order_id, f.taker_order_id):
                life = lives.get(oid)
                if life is not None and life.first_fill is None:
                    life.first_fill = f.time
        if rec.action_type == "C" and rec.order_id in lives:
            lives[rec.order_id].cancel = rec.time
    return lives


def agent_statistics(streams: Iterable[Sequence[EventRecord]]) -> dict[int, np.ndarray]:
    """Empirical limit, market, cancel, trade and aggressive-trade ratios per agent.

    limit/market/cancel: share of the agent's actions that are I / T / C.
    trade: share of the agent's orders with at least one execution.
    aggressive trade: share of the agent's executions where it was the taker.
    """
    counts: dict[int, np.ndarray] = {}  # I, T, C, all actions
    orders: dict[int, set] = {}
    executed: dict[int, set] = {}
    fills_taker: dict[int, int] = {}
    fills_all: dict[int, int] = {}
    for events in streams:
        for rec, fills, _ in replay(events):
            c = counts.setdefault(rec.agent_id, np.zeros(4))
            c[3] += 1
            if rec.action_type in ("I", "T", "C"):
                c["ITC".index(rec.action_type)] += 1
            if rec.action_type in ("I", "T"):
                orders.setdefault(rec.agent_id, set()).add(rec.order_id)
            for f in fills:
                executed.setdefault(f.maker_agent_id, set()).add(f.maker_order_id)
                executed.setdefault(f.taker_agent_id, set()).add(f.taker_order_id)
                fills_taker[f.taker_agent_id] = fills_taker.get(f.taker_agent_id, 0) + 1
                for a in (f.maker_agent_id, f.taker_agent_id):
                    fills_all[a] = fills_all.get(a, 0) + 1
    out = {}
    for a, c in counts.items():
        mine = orders.get(a, set())
        n_fills = fills_all.get(a, 0)
        out[a] = np.array(
            [
                c[0] / c[3],
                c[1] / c[3],
                c[2] / c[3],
                len(executed.get(a, set()) & mine) / len(mine) if mine else 0.0,
                fills_taker.get(a, 0) / n_fills if n_fills else 0.0,
            ]
        )
    return out


def draw_samples(
    events: Sequence[EventRecord],
    session_end: float,
    agent_stats: Mapping[int, np.ndarray],
    per_day_quota: int = 100,
    lookback: int = 50,
    seed: int = 0,
    day: int = 0,
) -> tuple[list[OrderSample], SamplingReport]:
    """Build up to ``per_day_quota`` samples from one day's stream."""
    rng = np.random.default_rng(seed)
    events = list(events)
    lives = order_lifecycles(events)
    candidates = []
    for life in lives.values():
        t_star, _ = life.end(session_end)
        if life.at_best and t_star > life.submit_time:
            candidates.append(life)
    order = rng.permutation(len(candidates))
    candidates = [candidates[i] for i in order]

    queries = []  # (t0, candidate index, draw index)
    for ci, life in enumerate(candidates):
        t_star, _ = life.end(session_end)
        for d, t0 in enumerate(rng.uniform(life.submit_time, t_star, size=MAX_DRAWS)):
            if t0 > life.submit_time:
                queries.append((float(t0), ci, d))
    queries.sort()

    # state at t0 = book after every event strictly earlier than t0
    found: dict[int, dict[int, tuple]] = {}
    qi = 0
    n_applied = 0
    book_iter = replay(events)
    book = OrderBook()
    while qi < len(queries):
        t0, ci, d = queries[qi]
        if n_applied < len(events) and events[n_applied].time < t0:
            _, _, book = next(book_iter)
            n_applied += 1
            continue
        qi += 1
        if n_applied < lookback:
            continue
        life = candidates[ci]
        o = book.orders.get(life.order_id)
        if o is None or o.price != book.best(o.side):
            continue
        window = events[n_applied - lookback : n_applied]
        if any(e.snapshot is None for e in window):
            continue
        found.setdefault(ci, {})[d] = (t0, book.units_ahead(life.order_id), n_applied)

    samples: list[OrderSample] = []
    n_valid = 0
    for ci, life in enumerate(candidates):
        draws = found.get(ci)
        if not draws:
            continue
        n_valid += 1
        if len(samples) >= per_day_quota:
            continue
        t0, queue, n_before = draws[min(draws)]
        window = events[n_before - lookback : n_before]
        t_star, delta = life.end(session_end)
        samples.append(
            OrderSample(
                actions=_action_rows(window, agent_stats),
                lob=orient(np.array([e.snapshot for e in window]), life.side),
                queue=int(queue),
                t0=t0,
                duration=t_star - t0,
                delta=delta,
                side=life.side,
                order_id=life.order_id,
                day=day,
            )
        )
    report = SamplingReport(day, len(candidates), n_valid, len(samples))
    if len(samples) < per_day_quota:
        report.warning = f"day {day}: only {len(samples)} of {per_day_quota} valid samples"
        log.warning(report.warning)
    return samples, report


def _action_rows(window: Sequence[EventRecord], agent_stats: Mapping[int, np.ndarray]) -> np.ndarray:
    rows = np.zeros((len(window), ACTION_WIDTH))
    for j, e in enumerate(window):
        rows[j, 0] = ACTION_CODES[e.action_type]
        stats = agent_stats.get(e.agent_id)
        if stats is not None:
            rows[j, 1:] = stats
    return rows
