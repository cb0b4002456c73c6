"""Zero-intelligence agent population driving the matching engine for one session."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from lobsrv.features.snapshot import (
    RollingVolatility,
    SnapshotContext,
    SnapshotUnavailable,
    snapshot_features,
)
from lobsrv.market.book import (
    ASK,
    BID,
    EventRecord,
    Fill,
    Intent,
    OrderBook,
    apply_event,
    opposite,
)

RATIO_NAMES = ("limit_ratio", "market_ratio", "cancel_ratio", "trade_ratio", "aggressive_trade_ratio")


class ConfigError(ValueError):
    pass


@dataclass
class AgentProfile:
    """Behavioural ratios of one agent.

    limit/market/cancel ratios are the probabilities of each action among
    the agent's submissions; the remainder goes to modifications and stops.
    ``trade_ratio`` is the chance an insertion joins the touch (and so tends
    to execute); ``aggressive_trade_ratio`` the chance a modification crosses.
    """

    agent_id: int
    limit_ratio: float
    market_ratio: float
    cancel_ratio: float
    trade_ratio: float
    aggressive_trade_ratio: float

    def __post_init__(self):
        for name in RATIO_NAMES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"agent {self.agent_id}: {name}={v} outside [0, 1]")
        if self.limit_ratio + self.market_ratio + self.cancel_ratio > 1.0 + 1e-9:
            raise ConfigError(f"agent {self.agent_id}: limit + market + cancel ratios exceed 1")

    def ratios(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in RATIO_NAMES)


@dataclass
class SimConfig:
    n_agents: int = 20
    session_seconds: float = 600.0
    mean_event_rate: float = 20.0
    seed: int = 0
    base_price: int = 10_000
    initial_levels: int = 5
    initial_orders_per_level: int = 3
    max_quantity: int = 3
    price_decay: float = 0.5
    stop_share: float = 0.05
    agent_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.n_agents < 1:
            raise ConfigError("empty agent population")
        if self.session_seconds <= 0:
            raise ConfigError("session_seconds must be positive")
        if self.mean_event_rate < 0:
            raise ConfigError("mean_event_rate must be non-negative")
        if self.max_quantity < 1 or self.initial_levels < 1:
            raise ConfigError("max_quantity and initial_levels must be positive")
        if not 0.0 < self.price_decay < 1.0:
            raise ConfigError("price_decay must be in (0, 1)")
        for aid in self.agent_overrides:
            if not 0 <= aid < self.n_agents:
                raise ConfigError(f"override for unknown agent {aid}")

    @classmethod
    def from_mapping(cls, kv: dict) -> "SimConfig":
        """Build from flat string keys; ``agent.<id>.<ratio>`` overrides one agent."""
        known = {f.name: f.type for f in fields(cls) if f.name != "agent_overrides"}
        cfg = cls()
        overrides: dict = {}
        for key, raw in kv.items():
            if key.startswith("agent."):
                _, aid, ratio = key.split(".", 2)
                if ratio not in RATIO_NAMES:
                    raise ConfigError(f"unknown agent ratio {ratio!r}")
                overrides.setdefault(int(aid), {})[ratio] = float(raw)
            elif key in known:
                cast = float if known[key] in ("float", float) else int
                setattr(cfg, key, cast(raw))
        cfg.agent_overrides = overrides
        return cfg


def load_sim_config(path) -> SimConfig:
    from lobsrv.config import read_kv

    return SimConfig.from_mapping(read_kv(path))


def draw_profiles(config: SimConfig, rng: np.random.Generator) -> list[AgentProfile]:
    profiles = []
    for aid in range(config.n_agents):
        limit = rng.uniform(0.25, 0.45)
        market = rng.uniform(0.05, 0.25)
        cancel = rng.uniform(0.2, min(0.4, 1.0 - limit - market))
        vals = dict(
            limit_ratio=limit,
            market_ratio=market,
            cancel_ratio=cancel,
            trade_ratio=rng.uniform(0.2, 0.8),
            aggressive_trade_ratio=rng.uniform(0.05, 0.5),
        )
        vals.update(config.agent_overrides.get(aid, {}))
        profiles.append(AgentProfile(aid, **vals))
    return profiles


@dataclass
class OrderLife:
    """Ground-truth lifecycle kept by the generator (not written to the stream)."""

    order_id: int
    agent_id: int
    side: str
    submit_time: float
    first_fill_time: Optional[float] = None
    end_time: Optional[float] = None
    end_reason: Optional[str] = None


@dataclass
class SessionResult:
    config: SimConfig
    profiles: list
    events: list
    fills: list
    lives: dict
    book: OrderBook


class _Session:
    def __init__(self, config: SimConfig, seed: int):
        config.validate()
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        # the agent population is a property of the market, shared by every session of a config
        self.profiles = draw_profiles(config, np.random.default_rng([config.seed, 0x5EED]))
        self.book = OrderBook()
        self.vol = RollingVolatility()
        self.events: list[EventRecord] = []
        self.fills: list[Fill] = []
        self.lives: dict[int, OrderLife] = {}
        self.next_id = 1
        self.own: list[list[int]] = [[] for _ in range(config.n_agents)]

    # -- engine wrapper ---------------------------------------------------
    def submit(self, intent: Intent, time: float) -> EventRecord:
        mid_before = self.book.mid()
        _, fills, rec = apply_event(self.book, intent, time)
        self.vol.observe(mid_before, self.book.mid(), bool(fills))
        ctx = SnapshotContext(self.vol.value, min(time / self.cfg.session_seconds, 1.0))
        try:
            rec.snapshot = [float(x) for x in snapshot_features(self.book, BID, ctx)]
        except SnapshotUnavailable:
            rec.snapshot = None
        self.events.append(rec)
        self.fills.extend(fills)
        if intent.kind in ("insert", "market") and intent.order_id not in self.lives:
            self.lives[intent.order_id] = OrderLife(intent.order_id, intent.agent_id, intent.side, time)
        for f in fills:
            for oid in (f.maker_order_id, f.taker_order_id):
                life = self.lives.get(oid)
                if life is not None and life.first_fill_time is None:
                    life.first_fill_time = time
        if rec.action_type == "C":
            self.lives[rec.order_id].end_time = time
            self.lives[rec.order_id].end_reason = "cancel"
        return rec

    def new_id(self) -> int:
        oid = self.next_id
        self.next_id += 1
        return oid

    def resting_own(self, agent: int) -> list[int]:
        alive = [oid for oid in self.own[agent] if oid in self.book.orders]
        self.own[agent] = alive
        return alive

    # -- behaviour --------------------------------------------------------
    def seed_book(self) -> None:
        c = self.cfg
        agent = 0
        for lvl in range(c.initial_levels):
            for side, price in ((BID, c.base_price - 1 - lvl), (ASK, c.base_price + 1 + lvl)):
                for _ in range(c.initial_orders_per_level):
                    oid = self.new_id()
                    qty = int(self.rng.integers(1, c.max_quantity + 1))
                    self.submit(Intent("insert", agent, oid, side, price, qty), 0.0)
                    self.own[agent].append(oid)
                    agent = (agent + 1) % c.n_agents

    def passive_price(self, side: str, profile: AgentProfile) -> int:
        best_same = self.book.best(side)
        best_opp = self.book.best(opposite(side))
        sign = -1 if side == BID else 1
        if self.rng.random() < profile.trade_ratio:
            spread = best_opp - best_same
            if spread > 1 and self.rng.random() < 0.3:
                return best_same - sign
            return best_same
        offset = int(self.rng.geometric(self.cfg.price_decay))
        return best_same + sign * offset

    def act(self, agent: int, time: float) -> None:
        p = self.profiles[agent]
        u = self.rng.random()
        side = BID if self.rng.random() < 0.5 else ASK
        qty = int(self.rng.integers(1, self.cfg.max_quantity + 1))
        if u < p.limit_ratio:
            self.insert(agent, side, qty, time)
        elif u < p.limit_ratio + p.market_ratio:
            self.aggress(agent, side, qty, time)
        elif u < p.limit_ratio + p.market_ratio + p.cancel_ratio:
            self.cancel(agent, side, qty, time)
        elif self.rng.random() < self.cfg.stop_share:
            oid = self.new_id()
            price = self.book.best(opposite(side)) + (2 if side == BID else -2)
            self.submit(Intent("stop", agent, oid, side, price, qty), time)
        else:
            self.modify(agent, side, qty, time)

    def insert(self, agent: int, side: str, qty: int, time: float) -> None:
        oid = self.new_id()
        price = self.passive_price(side, self.profiles[agent])
        self.submit(Intent("insert", agent, oid, side, price, qty), time)
        self.own[agent].append(oid)

    def aggress(self, agent: int, side: str, qty: int, time: float) -> None:
        other = opposite(side)
        # never sweep a side empty
        room = self.book.side_volume(other) - 1
        qty = min(qty, room)
        if qty < 1:
            self.insert(agent, side, max(1, qty), time)
            return
        oid = self.new_id()
        if self.rng.random() < 0.5:
            self.submit(Intent("market", agent, oid, side, None, qty), time)
        else:
            price = self.book.best(other)
            qty = min(qty, self.book.level_volume(other, price) + 1, room)
            self.submit(Intent("insert", agent, oid, side, price, qty), time)
            if oid in self.book.orders:
                self.own[agent].append(oid)

    def cancel(self, agent: int, side: str, qty: int, time: float) -> None:
        for oid in self.resting_own(agent):
            o = self.book.orders[oid]
            if len(self.book.levels(o.side)) > 1 or len(self.book.levels(o.side)[o.price]) > 1:
                self.submit(Intent("cancel", agent, oid), time)
                return
        self.insert(agent, side, qty, time)

    def modify(self, agent: int, side: str, qty: int, time: float) -> None:
        alive = self.resting_own(agent)
        if not alive:
            self.insert(agent, side, qty, time)
            return
        oid = alive[int(self.rng.integers(len(alive)))]
        o = self.book.orders[oid]
        p = self.profiles[agent]
        other = opposite(o.side)
        sole = sum(len(q) for q in self.book.levels(o.side).values()) == 1
        if self.rng.random() < p.aggressive_trade_ratio and not sole and o.quantity < self.book.side_volume(other):
            self.submit(Intent("modify", agent, oid, price=self.book.best(other)), time)
        elif o.quantity > 1 and self.rng.random() < 0.5:
            new_q = int(self.rng.integers(1, o.quantity))
            self.submit(Intent("modify", agent, oid, quantity=new_q), time)
        elif self.rng.random() < 0.5:
            self.submit(Intent("modify", agent, oid, quantity=o.quantity + int(self.rng.integers(1, 3))), time)
        else:
            step = -1 if o.side == BID else 1
            if sole:
                self.submit(Intent("modify", agent, oid, quantity=o.quantity + 1), time)
            else:
                self.submit(Intent("modify", agent, oid, price=o.price + step), time)

    def run(self) -> SessionResult:
        c = self.cfg
        if c.mean_event_rate > 0:
            self.seed_book()
            t = 0.0
            while True:
                t += float(self.rng.exponential(1.0 / c.mean_event_rate))
                if t >= c.session_seconds:
                    break
                self.act(int(self.rng.integers(c.n_agents)), t)
        for life in self.lives.values():
            if life.end_time is None:
                if life.order_id in self.book.orders:
                    life.end_time, life.end_reason = c.session_seconds, "expiry"
                else:
                    life.end_reason = "filled"
        return SessionResult(c, self.profiles, self.events, self.fills, self.lives, self.book)


def run_session(config: SimConfig, seed: Optional[int] = None) -> SessionResult:
    """Generate one session; identical ``(config, seed)`` gives identical events."""
    return _Session(config, config.seed if seed is None else seed).run()


# -- NDJSON stream ----------------------------------------------------------


def dumps_stream(events: Iterable[EventRecord]) -> str:
    return "".join(json.dumps(e.to_dict(), separators=(",", ":")) + "\n" for e in events)


def write_stream(path, events: Iterable[EventRecord]) -> None:
    Path(path).write_text(dumps_stream(events))


def iter_stream(path) -> Iterator[EventRecord]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield EventRecord.from_dict(json.loads(line))


def read_stream(path) -> list[EventRecord]:
    return list(iter_stream(path))
