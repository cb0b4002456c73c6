"""Price-time priority limit order book and the event vocabulary.

Action letters follow the exchange taxonomy used throughout the package:

    I  insertion of a new (passive) limit order
    C  cancellation of a resting order
    R  modification that loses priority (price change or size increase)
    r  modification that keeps priority (size decrease at the same price)
    S  modification that makes the order aggressive (crosses the spread)
    T  aggressive order, market or marketable limit, executed on arrival
    J  stop-order insertion (recorded only, never triggers)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

BID = "bid"
ASK = "ask"
SIDES = (BID, ASK)
ACTION_TYPES = ("I", "C", "R", "r", "S", "T", "J")
ACTION_CODES = {a: i for i, a in enumerate(ACTION_TYPES)}


class RejectedEvent(ValueError):
    """The intent cannot be applied to the current book."""


def opposite(side: str) -> str:
    return ASK if side == BID else BID


@dataclass
class Order:
    order_id: int
    agent_id: int
    side: str
    price: int
    quantity: int
    arrival_seq: int
    arrival_time: float


@dataclass(frozen=True)
class Fill:
    seq: int
    time: float
    price: int
    quantity: int
    maker_order_id: int
    maker_agent_id: int
    maker_side: str
    taker_order_id: int
    taker_agent_id: int


@dataclass
class Intent:
    """What an agent asks the exchange to do.

    ``kind`` is one of insert, cancel, modify, market, stop. For ``market``
    the price is ignored; any unfilled remainder is dropped.
    """

    kind: str
    agent_id: int
    order_id: int
    side: Optional[str] = None
    price: Optional[int] = None
    quantity: Optional[int] = None


@dataclass
class EventRecord:
    seq: int
    time: float
    action_type: str
    agent_id: int
    order_id: int
    side: str
    price_ticks: Optional[int]
    quantity: int
    snapshot: Optional[list] = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "time": self.time,
            "action_type": self.action_type,
            "agent_id": self.agent_id,
            "order_id": self.order_id,
            "side": self.side,
            "price_ticks": self.price_ticks,
            "quantity": self.quantity,
            "snapshot": self.snapshot,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        return cls(
            seq=int(d["seq"]),
            time=float(d["time"]),
            action_type=d["action_type"],
            agent_id=int(d["agent_id"]),
            order_id=int(d["order_id"]),
            side=d["side"],
            price_ticks=None if d["price_ticks"] is None else int(d["price_ticks"]),
            quantity=int(d["quantity"]),
            snapshot=d.get("snapshot"),
        )

    def to_intent(self) -> Intent:
        """Recover the intent that produced this record (used for replay)."""
        kind = {
            "I": "insert",
            "C": "cancel",
            "R": "modify",
            "r": "modify",
            "S": "modify",
            "J": "stop",
        }.get(self.action_type)
        if self.action_type == "T":
            kind = "market" if self.price_ticks is None else "insert"
        return Intent(kind, self.agent_id, self.order_id, self.side, self.price_ticks, self.quantity)


@dataclass
class OrderBook:
    bids: dict = field(default_factory=dict)
    asks: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)
    seq: int = 0

    # -- queries ----------------------------------------------------------
    def levels(self, side: str) -> dict:
        return self.bids if side == BID else self.asks

    @property
    def best_bid(self) -> Optional[int]:
        return max(self.bids) if self.bids else None

    @property
    def best_ask(self) -> Optional[int]:
        return min(self.asks) if self.asks else None

    def best(self, side: str) -> Optional[int]:
        return self.best_bid if side == BID else self.best_ask

    def mid(self) -> Optional[float]:
        if not self.bids or not self.asks:
            return None
        return 0.5 * (self.best_bid + self.best_ask)

    def level_volume(self, side: str, price: int) -> int:
        q = self.levels(side).get(price)
        return sum(o.quantity for o in q) if q else 0

    def side_volume(self, side: str) -> int:
        return sum(o.quantity for q in self.levels(side).values() for o in q)

    def depth(self, side: str, n: int) -> list[tuple[int, int]]:
        """Top ``n`` (price, level volume) pairs, best first."""
        book = self.levels(side)
        prices = sorted(book, reverse=(side == BID))[:n]
        return [(p, sum(o.quantity for o in book[p])) for p in prices]

    def units_ahead(self, order_id: int) -> int:
        o = self.orders[order_id]
        ahead = 0
        for other in self.levels(o.side)[o.price]:
            if other.order_id == order_id:
                return ahead
            ahead += other.quantity
        raise RuntimeError(f"order {order_id} missing from its level")

    def is_crossed(self) -> bool:
        return bool(self.bids and self.asks and self.best_bid >= self.best_ask)

    def copy(self) -> "OrderBook":
        new = OrderBook(seq=self.seq)
        for side in SIDES:
            dst = new.levels(side)
            for price, q in self.levels(side).items():
                dq = deque()
                for o in q:
                    c = Order(**o.__dict__)
                    dq.append(c)
                    new.orders[c.order_id] = c
                dst[price] = dq
        return new

    # -- mutation helpers -------------------------------------------------
    def _rest(self, order: Order) -> None:
        self.levels(order.side).setdefault(order.price, deque()).append(order)
        self.orders[order.order_id] = order

    def _remove(self, order: Order) -> None:
        book = self.levels(order.side)
        q = book[order.price]
        q.remove(order)
        if not q:
            del book[order.price]
        del self.orders[order.order_id]

    def _match(self, side: str, limit: Optional[int], qty: int, taker_id: int, taker_agent: int, seq: int, time: float) -> tuple[int, list[Fill]]:
        """Execute an aggressive ``side`` order against the opposite book.

        Returns the unfilled remainder and the fills in execution order.
        """
        fills: list[Fill] = []
        other = opposite(side)
        book = self.levels(other)
        while qty > 0 and book:
            best = self.best(other)
            if limit is not None and ((side == BID and best > limit) or (side == ASK and best < limit)):
                break
            q = book[best]
            while qty > 0 and q:
                maker = q[0]
                n = min(qty, maker.quantity)
                fills.append(Fill(seq, time, best, n, maker.order_id, maker.agent_id, other, taker_id, taker_agent))
                maker.quantity -= n
                qty -= n
                if maker.quantity == 0:
                    q.popleft()
                    del self.orders[maker.order_id]
            if not q:
                del book[best]
        return qty, fills

    def crosses(self, side: str, price: int) -> bool:
        best = self.best(opposite(side))
        if best is None:
            return False
        return price >= best if side == BID else price <= best


def apply_event(
    book: OrderBook,
    intent: Intent,
    time: float,
    snapshot_fn: Optional[Callable[[OrderBook], list]] = None,
) -> tuple[OrderBook, list[Fill], EventRecord]:
    """Apply one intent in place and describe what happened.

    Raises :class:`RejectedEvent` for unknown order ids, non-positive sizes,
    duplicate ids on insertion and no-op modifications; the book is left
    untouched in that case.
    """
    kind = intent.kind
    seq = book.seq + 1
    fills: list[Fill] = []
    if kind in ("insert", "market", "stop"):
        if intent.quantity is None or intent.quantity <= 0:
            raise RejectedEvent(f"non-positive quantity {intent.quantity}")
        if intent.side not in SIDES:
            raise RejectedEvent(f"bad side {intent.side!r}")
        if intent.order_id in book.orders:
            raise RejectedEvent(f"order id {intent.order_id} already resting")

    if kind == "insert":
        if intent.price is None:
            raise RejectedEvent("limit insertion needs a price")
        action = "I"
        remaining = intent.quantity
        if book.crosses(intent.side, intent.price):
            action = "T"
            remaining, fills = book._match(intent.side, intent.price, remaining, intent.order_id, intent.agent_id, seq, time)
        if remaining > 0:
            book._rest(Order(intent.order_id, intent.agent_id, intent.side, intent.price, remaining, seq, time))
        record = EventRecord(seq, time, action, intent.agent_id, intent.order_id, intent.side, intent.price, intent.quantity)
    elif kind == "market":
        _, fills = book._match(intent.side, None, intent.quantity, intent.order_id, intent.agent_id, seq, time)
        record = EventRecord(seq, time, "T", intent.agent_id, intent.order_id, intent.side, None, intent.quantity)
    elif kind == "stop":
        record = EventRecord(seq, time, "J", intent.agent_id, intent.order_id, intent.side, intent.price, intent.quantity)
    elif kind == "cancel":
        order = book.orders.get(intent.order_id)
        if order is None:
            raise RejectedEvent(f"unknown order id {intent.order_id}")
        book._remove(order)
        record = EventRecord(seq, time, "C", order.agent_id, order.order_id, order.side, order.price, order.quantity)
    elif kind == "modify":
        order = book.orders.get(intent.order_id)
        if order is None:
            raise RejectedEvent(f"unknown order id {intent.order_id}")
        price = order.price if intent.price is None else intent.price
        qty = order.quantity if intent.quantity is None else intent.quantity
        if qty <= 0:
            raise RejectedEvent(f"non-positive quantity {qty}")
        if price == order.price and qty == order.quantity:
            raise RejectedEvent("modification changes nothing")
        if price == order.price and qty < order.quantity:
            order.quantity = qty
            action = "r"
        else:
            book._remove(order)
            remaining = qty
            action = "R"
            if book.crosses(order.side, price):
                action = "S"
                remaining, fills = book._match(order.side, price, qty, order.order_id, order.agent_id, seq, time)
            if remaining > 0:
                book._rest(Order(order.order_id, order.agent_id, order.side, price, remaining, seq, time))
        record = EventRecord(seq, time, action, order.agent_id, order.order_id, order.side, price, qty)
    else:
        raise RejectedEvent(f"unknown intent kind {kind!r}")

    book.seq = seq
    if snapshot_fn is not None:
        record.snapshot = snapshot_fn(book)
    return book, fills, record
