"""Order streams: CSV ingestion, chronological splits, windows and batching.

CSV schema (header required)::

    seq,side,action,is_mo,price,volume,best_bid,best_ask

plus a ``<basename>.meta`` sidecar of ``key=value`` lines holding
``tick_size``, ``min_volume_unit`` and ``instrument``.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .orderdomain import (
    HISTORY,
    MAX_CLASS,
    N_FEATURES,
    Condition,
    Order,
    RawOrder,
)

COLUMNS = ("seq", "side", "action", "is_mo", "price", "volume", "best_bid", "best_ask")
META_KEYS = ("tick_size", "min_volume_unit", "instrument")


class DataError(ValueError):
    """Malformed or unusable order data."""


def derive_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """Independent RNG stream for (seed, labels...); string labels are hashed with CRC32."""
    key = tuple(zlib.crc32(x.encode()) if isinstance(x, str) else int(x) for x in labels)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass
class OrderStream:
    """Column-oriented chronological order stream (prices in currency units)."""

    seq: np.ndarray
    side: np.ndarray
    action: np.ndarray
    is_mo: np.ndarray
    price: np.ndarray
    volume: np.ndarray
    best_bid: np.ndarray
    best_ask: np.ndarray
    tick_size: float = 1.0
    min_volume_unit: float = 1.0
    instrument: str = "SYNTH"
    rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.rows is None:
            self.rows = np.arange(1, len(self.seq) + 1)

    def __len__(self) -> int:
        return len(self.seq)

    def slice(self, start: int, stop: int) -> "OrderStream":
        cols = {c: getattr(self, c)[start:stop] for c in COLUMNS}
        return OrderStream(
            **cols,
            tick_size=self.tick_size,
            min_volume_unit=self.min_volume_unit,
            instrument=self.instrument,
            rows=self.rows[start:stop],
        )

    def raw_order(self, i: int) -> RawOrder:
        return RawOrder(
            int(self.side[i]),
            int(self.action[i]),
            int(self.is_mo[i]),
            float(self.price[i]),
            float(self.volume[i]),
            float(self.best_bid[i]),
            float(self.best_ask[i]),
            self.tick_size,
            self.min_volume_unit,
        )

    def ticks(self, col: str) -> np.ndarray:
        return np.rint(getattr(self, col) / self.tick_size).astype(np.int64)

    def validate(self) -> "OrderStream":
        if self.tick_size <= 0 or self.min_volume_unit <= 0:
            raise DataError("tick_size and min_volume_unit must be positive")
        if len(self) > 1 and np.any(np.diff(self.seq) <= 0):
            bad = int(np.argmax(np.diff(self.seq) <= 0)) + 1
            raise DataError(f"row {self.rows[bad]}: seq not strictly increasing")
        for col in ("side", "action", "is_mo"):
            arr = getattr(self, col)
            bad = np.flatnonzero((arr != 0) & (arr != 1))
            if bad.size:
                raise DataError(f"row {self.rows[bad[0]]}, field {col}: must be 0 or 1")
        bad = np.flatnonzero(~((self.best_ask >= self.best_bid) & (self.best_bid > 0)))
        if bad.size:
            raise DataError(f"row {self.rows[bad[0]]}, field best_bid/best_ask: need best_ask >= best_bid > 0")
        bad = np.flatnonzero(self.volume < 0)
        if bad.size:
            raise DataError(f"row {self.rows[bad[0]]}, field volume: negative")
        for col, unit in (
            ("price", self.tick_size),
            ("best_bid", self.tick_size),
            ("best_ask", self.tick_size),
            ("volume", self.min_volume_unit),
        ):
            q = getattr(self, col) / unit
            off = np.abs(q - np.rint(q)) > 1e-6 * np.maximum(1.0, np.abs(q))
            bad = np.flatnonzero(off)
            if bad.size:
                i = bad[0]
                raise DataError(
                    f"row {self.rows[i]}, field {col}: value {getattr(self, col)[i]!r} "
                    f"not aligned to the grid of {unit}"
                )
        return self


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{n}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_kv(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def load_orders(path, meta_path=None) -> OrderStream:
    path = Path(path)
    meta_file = Path(meta_path) if meta_path else _meta_path(path)
    if not meta_file.exists():
        raise DataError(f"metadata sidecar {meta_file} not found")
    meta = read_kv(meta_file)
    try:
        tick = float(meta["tick_size"])
        unit = float(meta["min_volume_unit"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{meta_file}: bad or missing tick_size/min_volume_unit ({exc})") from exc
    ints = {"seq", "side", "action", "is_mo"}
    cols: dict[str, list] = {c: [] for c in COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file (need a header and at least {HISTORY + 1} rows)")
        if [h.strip() for h in header] != list(COLUMNS):
            raise DataError(f"{path}: header must be {','.join(COLUMNS)}, got {','.join(header)}")
        for row_no, row in enumerate(reader, 1):
            if len(row) != len(COLUMNS):
                raise DataError(f"row {row_no}: expected {len(COLUMNS)} fields, got {len(row)}")
            for name, text in zip(COLUMNS, row):
                try:
                    cols[name].append(int(text) if name in ints else float(text))
                except ValueError:
                    raise DataError(f"row {row_no}, field {name}: cannot parse {text!r}") from None
    if not cols["seq"]:
        raise DataError(f"{path}: empty order stream (need at least {HISTORY + 1} rows for one window)")
    stream = OrderStream(
        **{c: np.asarray(v, dtype=np.int64 if c in ints else np.float64) for c, v in cols.items()},
        tick_size=tick,
        min_volume_unit=unit,
        instrument=meta.get("instrument", ""),
    )
    return stream.validate()


def _fmt(x: float) -> str:
    return repr(float(x))


def save_orders(stream: OrderStream, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(len(stream)):
            w.writerow(
                (
                    int(stream.seq[i]),
                    int(stream.side[i]),
                    int(stream.action[i]),
                    int(stream.is_mo[i]),
                    _fmt(stream.price[i]),
                    _fmt(stream.volume[i]),
                    _fmt(stream.best_bid[i]),
                    _fmt(stream.best_ask[i]),
                )
            )
    write_kv(
        _meta_path(path),
        {"tick_size": _fmt(stream.tick_size), "min_volume_unit": _fmt(stream.min_volume_unit), "instrument": stream.instrument},
    )


def temporal_split(stream: OrderStream, ratios=(8, 1, 1)) -> tuple[OrderStream, OrderStream, OrderStream]:
    """Contiguous chronological split: floor(0.8n) / floor(0.1n) / remainder."""
    n = len(stream)
    if n < 30:
        raise DataError(f"stream of {n} orders too short to split (need >= 30)")
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_valid = n * ratios[1] // total
    return (
        stream.slice(0, n_train),
        stream.slice(n_train, n_train + n_valid),
        stream.slice(n_train + n_valid, n),
    )


def discretize_stream(stream: OrderStream, reference: str = "opposite") -> np.ndarray:
    """Vectorised discretize over a stream; returns int [n, 5] orders."""
    p, bid, ask = stream.ticks("price"), stream.ticks("best_bid"), stream.ticks("best_ask")
    if reference == "opposite":
        ticks = np.where(stream.side == 1, ask - p, p - bid)
    elif reference == "same":
        ticks = np.where(stream.side == 1, bid - p, p - ask)
    else:
        raise ValueError(f"unknown price reference {reference!r}")
    price = np.minimum(np.maximum(ticks, 0), MAX_CLASS)
    price = np.where(stream.is_mo == 1, 0, price)
    vol = np.minimum(np.rint(stream.volume / stream.min_volume_unit).astype(np.int64), MAX_CLASS)
    return np.stack([stream.side, stream.action, stream.is_mo, price, vol], axis=1).astype(np.int64)


@dataclass
class Windows:
    """Batched (Condition, next Order) pairs.

    history [n, 20, 7], quotes [n, 2], target [n, 5]; ``index[k]`` is the
    stream position of pair k's target order.
    """

    history: np.ndarray
    quotes: np.ndarray
    target: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    def __getitem__(self, k: int) -> tuple[Condition, Order]:
        return Condition(self.history[k], self.quotes[k]), Order(*map(int, self.target[k]))

    def __iter__(self) -> Iterator[tuple[Condition, Order]]:
        for k in range(len(self)):
            yield self[k]

    def take(self, idx) -> "Windows":
        return Windows(self.history[idx], self.quotes[idx], self.target[idx], self.index[idx])


def make_windows(stream: OrderStream, reference: str = "opposite") -> Windows:
    """Stride-1 sliding windows: pair k uses entries k..k+19 to predict entry k+20."""
    n = len(stream)
    if n < HISTORY + 1:
        raise DataError(f"need at least {HISTORY + 1} orders for one window, got {n}")
    orders = discretize_stream(stream, reference)
    bid, ask = stream.ticks("best_bid"), stream.ticks("best_ask")
    spread = np.minimum(np.maximum(ask - bid, 0), MAX_CLASS) / MAX_CLASS
    log_mid = np.log((stream.best_bid + stream.best_ask) / 2)
    n_pairs = n - HISTORY
    rows = np.arange(n_pairs)[:, None] + np.arange(HISTORY)[None, :]
    first = log_mid[:n_pairs, None]
    hist = np.empty((n_pairs, HISTORY, N_FEATURES))
    hist[:, :, :3] = orders[rows, :3]
    hist[:, :, 3:5] = orders[rows, 3:5] / MAX_CLASS
    hist[:, :, 5] = spread[rows]
    hist[:, :, 6] = np.clip(log_mid[rows] - first, -1.0, 1.0)
    tgt = np.arange(HISTORY, n)
    quotes = np.stack([spread[tgt], np.clip(log_mid[tgt] - first[:, 0], -1.0, 1.0)], axis=1)
    return Windows(hist, quotes, orders[tgt], tgt)


class Batcher:
    """Per-epoch uniform shuffles drawn from the stream ``derive_rng(seed, label, epoch)``."""

    def __init__(self, n: int, batch_size: int, seed: int, label: str = "batcher"):
        if batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        self.n, self.batch_size, self.seed, self.label = n, batch_size, seed, label

    def batches_per_epoch(self, training: bool = True) -> int:
        full = self.n // self.batch_size
        return full if training else full + (self.n % self.batch_size > 0)

    def epoch(self, epoch: int, training: bool = True) -> list[np.ndarray]:
        perm = derive_rng(self.seed, self.label, epoch).permutation(self.n)
        out = [perm[i : i + self.batch_size] for i in range(0, self.n, self.batch_size)]
        if training and out and len(out[-1]) < self.batch_size:
            out.pop()
        return out


def batcher(pairs: Windows, batch_size: int, seed: int, epoch: int = 0, training: bool = True) -> list[Windows]:
    b = Batcher(len(pairs), batch_size, seed)
    return [pairs.take(idx) for idx in b.epoch(epoch, training)]
