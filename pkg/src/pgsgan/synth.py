"""Zero-intelligence order generator with an exactly known class distribution.

The market state is (side of the last order, spread in ticks). Given the
state, the next order is drawn from a product of small categorical tables:

* side: repeats the last side with ``p_same_side``
* action: cancel with ``p_cancel_narrow`` / ``p_cancel_wide`` (spread <= ``narrow_spread`` is narrow)
* market order (new orders only): ``p_mo_narrow`` / ``p_mo_wide``
* price class of limit orders: weight ``price_decay ** |k - spread|`` for k in 0..39
* volume class: weight ``volume_decay_{buy,sell} ** (v - 1)`` for v in 1..39

Quotes: a market order moves the touched quote one tick away (spread + 1,
capped at ``max_spread`` by dragging the other quote along); a new limit
order with 1 <= price class < spread improves its own side by one tick.
Everything else leaves the quotes unchanged. The state is therefore a finite
Markov chain and the long-run class distribution follows by enumeration.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .dataflow import DataError, OrderStream, derive_rng, read_kv, write_kv
from .orderdomain import MAX_CLASS, N_CLASSES, N_PRICE, N_VOLUME, orders_of_indices


@dataclass
class SynthConfig:
    n_orders: int = 50_000
    seed: int = 0
    max_spread: int = 5
    narrow_spread: int = 1
    start_spread: int = 1
    start_side: int = 0
    start_bid: int = 100_000
    p_same_side: float = 0.65
    p_cancel_narrow: float = 0.25
    p_cancel_wide: float = 0.4
    p_mo_narrow: float = 0.15
    p_mo_wide: float = 0.05
    price_decay: float = 0.4
    volume_decay_buy: float = 0.5
    volume_decay_sell: float = 0.35
    tick_size: float = 1.0
    min_volume_unit: float = 100.0
    instrument: str = "SYNTH"

    def validate(self) -> "SynthConfig":
        for name in ("p_same_side", "p_cancel_narrow", "p_cancel_wide", "p_mo_narrow", "p_mo_wide"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DataError(f"synth config: {name}={p} is not a probability")
        for name in ("price_decay", "volume_decay_buy", "volume_decay_sell"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise DataError(f"synth config: {name} must lie in [0, 1)")
        if not 1 <= self.max_spread <= MAX_CLASS:
            raise DataError("synth config: max_spread must be in [1, 39]")
        if not 1 <= self.start_spread <= self.max_spread:
            raise DataError("synth config: start_spread must be in [1, max_spread]")
        if self.start_side not in (0, 1):
            raise DataError("synth config: start_side must be 0 or 1")
        if self.n_orders < 1 or self.tick_size <= 0 or self.min_volume_unit <= 0 or self.start_bid < 1:
            raise DataError("synth config: n_orders, tick_size, min_volume_unit, start_bid must be positive")
        return self

    @classmethod
    def from_dict(cls, items: dict) -> "SynthConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in items.items():
            if k not in known:
                raise DataError(f"synth config: unknown key {k!r}")
            typ = known[k].type
            try:
                kwargs[k] = int(v) if typ == "int" else float(v) if typ == "float" else str(v)
            except ValueError:
                raise DataError(f"synth config: bad value for {k}: {v!r}") from None
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_dict(read_kv(path))

    def save(self, path) -> None:
        write_kv(path, asdict(self))


def _geometric(decay: float, support: np.ndarray, centre: int) -> np.ndarray:
    w = np.where(support >= 0, decay ** np.abs(support - centre).astype(float), 0.0)
    if decay == 0.0:
        w = (support == centre).astype(float)
    return w / w.sum()


class SynthMarket:
    """Conditional tables and exact long-run distribution for a SynthConfig."""

    def __init__(self, config: SynthConfig):
        self.config = config.validate()
        c = config
        self.spreads = np.arange(1, c.max_spread + 1)
        self.n_states = 2 * c.max_spread
        cls = orders_of_indices(np.arange(N_CLASSES))
        self._cls = cls
        side, action, mo, price, vol = cls.T
        k = np.arange(N_PRICE)
        v = np.arange(N_VOLUME)
        vol_tables = {
            1: _geometric(c.volume_decay_buy, np.where(v >= 1, v, -1), 1),
            0: _geometric(c.volume_decay_sell, np.where(v >= 1, v, -1), 1),
        }
        self.cond = np.zeros((self.n_states, N_CLASSES))
        self.next_state = np.zeros((self.n_states, N_CLASSES), dtype=np.int64)
        for s in range(self.n_states):
            last_side, spread = self.decode_state(s)
            narrow = spread <= c.narrow_spread
            p_side = np.where(side == last_side, c.p_same_side, 1.0 - c.p_same_side)
            p_cancel = c.p_cancel_narrow if narrow else c.p_cancel_wide
            p_mo = c.p_mo_narrow if narrow else c.p_mo_wide
            p_action = np.where(action == 1, p_cancel, 1.0 - p_cancel)
            # cancels are never market orders
            p_mo_given = np.where(action == 1, (mo == 0).astype(float), np.where(mo == 1, p_mo, 1.0 - p_mo))
            price_tab = _geometric(c.price_decay, k, spread)
            p_price = np.where(mo == 1, (price == 0).astype(float), price_tab[price])
            p_vol = np.where(side == 1, vol_tables[1][vol], vol_tables[0][vol])
            self.cond[s] = p_side * p_action * p_mo_given * p_price * p_vol
            new_spread = np.where(
                (action == 0) & (mo == 1),
                np.minimum(spread + 1, c.max_spread),
                np.where((action == 0) & (mo == 0) & (price >= 1) & (price < spread), spread - 1, spread),
            )
            self.next_state[s] = self.encode_state(side, new_spread)
        sums = self.cond.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise DataError(f"conditional tables do not sum to 1 (max error {np.max(np.abs(sums - 1)):.3g})")
        self.transition = np.zeros((self.n_states, self.n_states))
        for s in range(self.n_states):
            np.add.at(self.transition[s], self.next_state[s], self.cond[s])
        self.start_state = int(self.encode_state(c.start_side, c.start_spread))
        self.state_distribution = self._long_run_states()
        truth = self.state_distribution @ self.cond
        self.ground_truth = truth / truth.sum()

    def encode_state(self, side, spread):
        return np.asarray(side) * self.config.max_spread + (np.asarray(spread) - 1)

    def decode_state(self, s: int) -> tuple[int, int]:
        return s // self.config.max_spread, s % self.config.max_spread + 1

    def _long_run_states(self) -> np.ndarray:
        # Cesaro limit from the start state: square the lazy chain (handles periodic/reducible chains)
        lazy = 0.5 * (np.eye(self.n_states) + self.transition)
        for _ in range(64):
            lazy = lazy @ lazy
            lazy /= lazy.sum(axis=1, keepdims=True)
        return lazy[self.start_state]

    def conditional(self, last_side: int, spread: int) -> np.ndarray:
        """Exact next-order class distribution given the market state."""
        return self.cond[int(self.encode_state(last_side, spread))]

    def generate(self, n: int | None = None) -> OrderStream:
        c = self.config
        n = c.n_orders if n is None else n
        rng = derive_rng(c.seed, "synth")
        u = rng.random(n)
        cdf = np.cumsum(self.cond, axis=1)
        cdf[:, -1] = 1.0
        cls = self._cls
        idx = np.empty(n, dtype=np.int64)
        bids = np.empty(n, dtype=np.int64)
        asks = np.empty(n, dtype=np.int64)
        bid, ask = c.start_bid, c.start_bid + c.start_spread
        state = self.start_state
        side_of, action_of, mo_of, price_of = cls[:, 0], cls[:, 1], cls[:, 2], cls[:, 3]
        max_spread = c.max_spread
        for i in range(n):
            j = int(np.searchsorted(cdf[state], u[i], side="right"))
            idx[i] = j
            bids[i], asks[i] = bid, ask
            side = side_of[j]
            if action_of[j] == 0:
                spread = ask - bid
                if mo_of[j]:
                    if side == 1:
                        ask += 1
                        if ask - bid > max_spread:
                            bid += 1
                    elif bid > 1:
                        bid -= 1
                        if ask - bid > max_spread:
                            ask -= 1
                elif 1 <= price_of[j] < spread:
                    if side == 1:
                        bid += 1
                    else:
                        ask -= 1
            state = self.next_state[state, j]
        orders = cls[idx]
        side, action, mo, price, vol = orders.T
        price_ticks = np.where(side == 1, asks - price, bids + price)
        return OrderStream(
            seq=np.arange(n, dtype=np.int64),
            side=side.copy(),
            action=action.copy(),
            is_mo=mo.copy(),
            price=price_ticks * c.tick_size,
            volume=vol * c.min_volume_unit,
            best_bid=bids * c.tick_size,
            best_ask=asks * c.tick_size,
            tick_size=c.tick_size,
            min_volume_unit=c.min_volume_unit,
            instrument=c.instrument,
        )


def synth_market(config: SynthConfig) -> tuple[OrderStream, np.ndarray]:
    market = SynthMarket(config)
    return market.generate(), market.ground_truth
