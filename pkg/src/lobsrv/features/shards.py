"""Sample shard files.

Binary layout (little-endian): magic ``LOBDS001``, then per sample::

    u32 L | u32 action_width | u32 lob_width
    f64 actions[L * action_width] | f64 lob[L * lob_width]   (row-major)
    u32 queue | f64 duration | u8 delta | u8 side (0 = bid, 1 = ask)

The NDJSON debug export carries the same fields by name, plus t0, order_id
and day.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from lobsrv.features.sampling import OrderSample
from lobsrv.market.book import ASK, BID

MAGIC = b"LOBDS001"
_HEAD = struct.Struct("<III")
_TAIL = struct.Struct("<IdBB")


class ShardError(ValueError):
    pass


def dumps_shard(samples: Iterable[OrderSample]) -> bytes:
    parts = [MAGIC]
    for s in samples:
        L, aw = s.actions.shape
        lw = s.lob.shape[1]
        if s.lob.shape[0] != L:
            raise ShardError("actions and lob windows differ in length")
        parts.append(_HEAD.pack(L, aw, lw))
        parts.append(np.ascontiguousarray(s.actions, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(s.lob, dtype="<f8").tobytes())
        parts.append(_TAIL.pack(s.queue, s.duration, s.delta, 0 if s.side == BID else 1))
    return b"".join(parts)


def loads_shard(buf: bytes) -> list[OrderSample]:
    if buf[:8] != MAGIC:
        raise ShardError("not a sample shard (bad magic)")
    pos = 8
    out = []
    while pos < len(buf):
        try:
            L, aw, lw = _HEAD.unpack_from(buf, pos)
            pos += _HEAD.size
            actions = np.frombuffer(buf, "<f8", L * aw, pos).reshape(L, aw).astype(np.float64)
            pos += 8 * L * aw
            lob = np.frombuffer(buf, "<f8", L * lw, pos).reshape(L, lw).astype(np.float64)
            pos += 8 * L * lw
            queue, duration, delta, side = _TAIL.unpack_from(buf, pos)
            pos += _TAIL.size
        except (struct.error, ValueError) as exc:
            raise ShardError(f"truncated shard at byte {pos}") from exc
        out.append(OrderSample(actions, lob, queue, float("nan"), duration, delta, ASK if side else BID))
    return out


def write_shard(path, samples: Iterable[OrderSample]) -> None:
    Path(path).write_bytes(dumps_shard(samples))


def read_shard(path) -> list[OrderSample]:
    return loads_shard(Path(path).read_bytes())


def write_debug_ndjson(path, samples: Iterable[OrderSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "L": s.actions.shape[0],
                        "actions": s.actions.tolist(),
                        "lob": s.lob.tolist(),
                        "queue": s.queue,
                        "duration": s.duration,
                        "delta": s.delta,
                        "side": s.side,
                        "t0": s.t0,
                        "order_id": s.order_id,
                        "day": s.day,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
