"""Discrete order representation and the 2*2*2*40*40 class space.

Index layout (frozen, histograms depend on it)::

    index = side*6400 + action*3200 + is_mo*1600 + price_class*40 + volume_class

side: 0 sell / 1 buy; action: 0 new / 1 cancel; is_mo: 0 limit / 1 market.
price_class counts ticks from the opposite best quote (a buy at the best ask
is 0); volume_class is volume divided by the minimum volume unit. Both are
clipped to 39. Market orders always carry price_class 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

N_PRICE = 40
N_VOLUME = 40
MAX_CLASS = 39
N_CLASSES = 2 * 2 * 2 * N_PRICE * N_VOLUME  # 12800
N_FEATURES = 7
HISTORY = 20

_STRIDES = (6400, 3200, 1600, 40, 1)


class OrderError(ValueError):
    pass


class Order(NamedTuple):
    side: int
    action: int
    is_mo: int
    price_class: int
    volume_class: int

    def validate(self) -> "Order":
        for name, val, hi in zip(self._fields, self, (1, 1, 1, MAX_CLASS, MAX_CLASS)):
            if not (0 <= int(val) <= hi):
                raise OrderError(f"{name}={val} outside [0, {hi}]")
        if self.is_mo == 1 and self.price_class != 0:
            raise OrderError(f"market order with price_class={self.price_class}; must be 0")
        return self

    @property
    def is_valid(self) -> bool:
        try:
            self.validate()
        except OrderError:
            return False
        return True


@dataclass(frozen=True)
class RawOrder:
    side: int
    action: int
    is_mo: int
    raw_price: float
    raw_volume: float
    best_bid: float
    best_ask: float
    tick_size: float
    min_volume_unit: float

    def validate(self) -> "RawOrder":
        for name in ("side", "action", "is_mo"):
            if getattr(self, name) not in (0, 1):
                raise OrderError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if self.tick_size <= 0 or self.min_volume_unit <= 0:
            raise OrderError("tick_size and min_volume_unit must be positive")
        if not (self.best_ask >= self.best_bid > 0):
            raise OrderError(f"need best_ask >= best_bid > 0, got bid={self.best_bid} ask={self.best_ask}")
        for name in ("raw_price", "best_bid", "best_ask"):
            to_ticks(getattr(self, name), self.tick_size, name)
        to_ticks(self.raw_volume, self.min_volume_unit, "raw_volume")
        return self


def to_ticks(value: float, unit: float, what: str = "value") -> int:
    """Exact integer multiple of ``unit``; rejects off-grid values."""
    q = value / unit
    n = round(q)
    if abs(q - n) > 1e-6 * max(1.0, abs(q)):
        raise OrderError(f"{what}={value} is not aligned to the grid of {unit}")
    return int(n)


def clip_to_class(value: int) -> int:
    if value < 0:
        raise OrderError(f"class value must be non-negative, got {value}")
    return min(int(value), MAX_CLASS)


def price_ticks(side: int, price_ticks_: int, bid_ticks: int, ask_ticks: int, reference: str = "opposite") -> int:
    """Distance in ticks from the reference best quote, signed so deeper prices are positive.

    ``reference="opposite"``: a buy is measured from the best ask and a sell
    from the best bid. ``reference="same"`` measures from the own-side quote.
    """
    if reference == "opposite":
        ref = ask_ticks if side == 1 else bid_ticks
    elif reference == "same":
        ref = bid_ticks if side == 1 else ask_ticks
    else:
        raise ValueError(f"unknown price reference {reference!r}")
    return ref - price_ticks_ if side == 1 else price_ticks_ - ref


def discretize(raw: RawOrder, reference: str = "opposite") -> Order:
    raw.validate()
    vol = to_ticks(raw.raw_volume, raw.min_volume_unit, "raw_volume")
    if raw.is_mo:
        price = 0
    else:
        ticks = price_ticks(
            raw.side,
            to_ticks(raw.raw_price, raw.tick_size, "raw_price"),
            to_ticks(raw.best_bid, raw.tick_size, "best_bid"),
            to_ticks(raw.best_ask, raw.tick_size, "best_ask"),
            reference,
        )
        # marketable limits cross the opposite quote; they sit at the 0-tick class
        price = clip_to_class(max(ticks, 0))
    return Order(raw.side, raw.action, raw.is_mo, price, clip_to_class(vol))


def class_index(o: Sequence[int]) -> int:
    o = Order(*o).validate()
    return sum(int(v) * s for v, s in zip(o, _STRIDES))


def order_of_index(idx: int) -> Order:
    if not 0 <= idx < N_CLASSES:
        raise OrderError(f"class index {idx} outside [0, {N_CLASSES})")
    fields = []
    for s in _STRIDES:
        fields.append(idx // s)
        idx %= s
    return Order(*fields)


def class_index_array(orders: np.ndarray) -> np.ndarray:
    """Vectorised class_index for an int array of shape [n, 5] (no validation)."""
    orders = np.asarray(orders, dtype=np.int64)
    return orders @ np.asarray(_STRIDES, dtype=np.int64)


def orders_of_indices(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    out = np.empty(idx.shape + (5,), dtype=np.int64)
    rem = idx.copy()
    for j, s in enumerate(_STRIDES):
        out[..., j] = rem // s
        rem = rem % s
    return out


def valid_mask(orders: np.ndarray) -> np.ndarray:
    """Row-wise Order invariant check for an int array [n, 5]."""
    o = np.asarray(orders)
    ok = np.all((o[:, :3] >= 0) & (o[:, :3] <= 1), axis=1)
    ok &= np.all((o[:, 3:] >= 0) & (o[:, 3:] <= MAX_CLASS), axis=1)
    ok &= (o[:, 2] == 0) | (o[:, 3] == 0)
    return ok


# -- condition encoding ---------------------------------------------------------
def spread_feature(bid_ticks: int, ask_ticks: int) -> float:
    return clip_to_class(max(ask_ticks - bid_ticks, 0)) / MAX_CLASS


def mid_return_feature(mid: float, first_mid: float) -> float:
    return float(np.clip(math.log(mid / first_mid), -1.0, 1.0))


def order_features(o: Sequence[int], spread_norm: float, mid_ret: float) -> np.ndarray:
    side, action, is_mo, price, vol = o
    return np.array(
        [side, action, is_mo, price / MAX_CLASS, vol / MAX_CLASS, spread_norm, mid_ret], dtype=np.float64
    )


@dataclass(frozen=True)
class Condition:
    """Encoded conditioning input: [20, 7] history features and a [2] quote vector."""

    history: np.ndarray
    quotes: np.ndarray

    def __post_init__(self):
        if self.history.shape != (HISTORY, N_FEATURES):
            raise OrderError(f"history features must be [{HISTORY}, {N_FEATURES}], got {self.history.shape}")
        if self.quotes.shape != (2,):
            raise OrderError(f"quote features must be [2], got {self.quotes.shape}")


def encode_condition(
    history: Sequence[RawOrder], current_bid: float, current_ask: float, reference: str = "opposite"
) -> Condition:
    """Encode 20 chronological raw orders plus the current best quotes.

    Row features: side, action, is_mo, price_class/39, volume_class/39,
    pre-order spread in ticks (clipped to 39, /39) and mid log-return since
    the first history entry (clipped to +-1).
    """
    if len(history) != HISTORY:
        raise OrderError(f"condition needs exactly {HISTORY} history orders, got {len(history)}")
    tick = history[0].tick_size
    first_mid = (history[0].best_bid + history[0].best_ask) / 2
    rows = []
    for raw in history:
        o = discretize(raw, reference)
        b, a = to_ticks(raw.best_bid, tick), to_ticks(raw.best_ask, tick)
        rows.append(order_features(o, spread_feature(b, a), mid_return_feature((raw.best_bid + raw.best_ask) / 2, first_mid)))
    b, a = to_ticks(current_bid, tick, "current_bid"), to_ticks(current_ask, tick, "current_ask")
    quotes = np.array([spread_feature(b, a), mid_return_feature((current_bid + current_ask) / 2, first_mid)])
    return Condition(np.stack(rows), quotes)


def encode_order_for_critic(orders: np.ndarray, quotes: np.ndarray) -> np.ndarray:
    """Row features of (possibly continuous) orders [n, 5] next to their current quotes [n, 2]."""
    orders = np.asarray(orders, dtype=np.float64)
    return np.concatenate(
        [orders[:, :3], orders[:, 3:5] / MAX_CLASS, np.asarray(quotes, dtype=np.float64)], axis=1
    )
