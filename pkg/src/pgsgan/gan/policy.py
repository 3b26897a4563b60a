"""Factorised order policy: three Bernoulli factors and two 40-way categoricals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import Tensor, log_sigmoid, log_softmax
from ..numcore.tensor import _stable_sigmoid, softmax_np
from ..orderdomain import N_CLASSES, N_PRICE, N_VOLUME, Order, orders_of_indices

BY_CHANCE_NLL = float(np.log(N_CLASSES))  # ln 12800 ~ 9.4572
BY_CHANCE_ENTROPY = float(np.log2(N_CLASSES))  # log2 12800 ~ 13.6438

_P0 = 3
_V0 = 3 + N_PRICE


@dataclass
class Policy:
    """Batched policy logits; every field has a leading batch axis."""

    logit_side: np.ndarray
    logit_action: np.ndarray
    logit_mo: np.ndarray
    logits_price: np.ndarray
    logits_volume: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "Policy":
        a = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        a = np.atleast_2d(a).astype(np.float64)
        return cls(a[:, 0], a[:, 1], a[:, 2], a[:, _P0:_V0], a[:, _V0:])

    @classmethod
    def uniform(cls, n: int = 1) -> "Policy":
        return cls.from_logits(np.zeros((n, 3 + N_PRICE + N_VOLUME)))

    @classmethod
    def one_hot(cls, orders, scale: float = 1e3) -> "Policy":
        """(Numerically) deterministic policy on the given orders [n, 5]."""
        o = np.atleast_2d(np.asarray(orders))
        n = len(o)
        logits = np.zeros((n, 3 + N_PRICE + N_VOLUME))
        logits[:, :3] = np.where(o[:, :3] == 1, scale, -scale)
        logits[:, _P0:_V0] = -scale
        logits[:, _V0:] = -scale
        logits[np.arange(n), _P0 + o[:, 3]] = scale
        logits[np.arange(n), _V0 + o[:, 4]] = scale
        return cls.from_logits(logits)

    def logits(self) -> np.ndarray:
        return np.concatenate(
            [np.stack([self.logit_side, self.logit_action, self.logit_mo], axis=1), self.logits_price, self.logits_volume],
            axis=1,
        )

    def __len__(self) -> int:
        return len(self.logit_side)

    def factor_probs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """P(side=1), P(cancel), P(mo), price probs [n,40], volume probs [n,40]."""
        return (
            _stable_sigmoid(self.logit_side),
            _stable_sigmoid(self.logit_action),
            _stable_sigmoid(self.logit_mo),
            softmax_np(self.logits_price, axis=1),
            softmax_np(self.logits_volume, axis=1),
        )


def _binary_entropy_bits(logit: np.ndarray) -> np.ndarray:
    p = _stable_sigmoid(logit)
    # log2 p = log_sigmoid(l) / ln 2, stable for large |l|
    lp = (np.minimum(logit, 0) - np.log1p(np.exp(-np.abs(logit)))) / np.log(2)
    lq = (np.minimum(-logit, 0) - np.log1p(np.exp(-np.abs(logit)))) / np.log(2)
    return -(p * lp + (1 - p) * lq)


def _categorical_entropy_bits(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -(np.exp(logp) * logp).sum(axis=1) / np.log(2)


def entropy(p: Policy) -> np.ndarray:
    """Joint policy entropy in bits, as the sum of the five factor entropies."""
    return (
        _binary_entropy_bits(p.logit_side)
        + _binary_entropy_bits(p.logit_action)
        + _binary_entropy_bits(p.logit_mo)
        + _categorical_entropy_bits(p.logits_price)
        + _categorical_entropy_bits(p.logits_volume)
    )


def _log_factors(p: Policy, orders: np.ndarray) -> np.ndarray:
    o = np.atleast_2d(np.asarray(orders))
    n = len(o)

    def log_bern(logit, bit):
        x = np.where(bit == 1, logit, -logit)
        return np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))

    def log_cat(logits, k):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted[np.arange(n), k] - np.log(np.exp(shifted).sum(axis=1))

    return np.stack(
        [
            log_bern(p.logit_side, o[:, 0]),
            log_bern(p.logit_action, o[:, 1]),
            log_bern(p.logit_mo, o[:, 2]),
            log_cat(p.logits_price, o[:, 3]),
            log_cat(p.logits_volume, o[:, 4]),
        ],
        axis=1,
    )


def nll(p: Policy, orders) -> np.ndarray:
    """-ln of the product of the five factor probabilities, one value per row."""
    return np.maximum(-_log_factors(p, orders).sum(axis=1), 0.0)


def nll_tensor(logits: Tensor, orders: np.ndarray) -> Tensor:
    """Differentiable per-row NLL of ``orders`` [n, 5] under logits [n, 83]."""
    o = np.asarray(orders)
    n = len(o)
    signs = np.where(o[:, :3] == 1, 1.0, -1.0).astype(logits.dtype)
    log_bin = log_sigmoid(logits[:, :3] * signs).sum(axis=1)
    lp = log_softmax(logits[:, _P0:_V0], axis=1)[np.arange(n), o[:, 3]]
    lv = log_softmax(logits[:, _V0:], axis=1)[np.arange(n), o[:, 4]]
    return -(log_bin + lp + lv)


def sample_orders(p: Policy, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one order per row, each factor independently.

    Returns (emitted, sampled): ``sampled`` holds the raw factor draws used
    for likelihood bookkeeping; ``emitted`` is identical except that market
    orders have their price class forced to 0.
    """
    ps, pa, pm, pp, pv = p.factor_probs()
    n = len(p)
    u = rng.random((n, 5))
    sampled = np.empty((n, 5), dtype=np.int64)
    sampled[:, 0] = u[:, 0] < ps
    sampled[:, 1] = u[:, 1] < pa
    sampled[:, 2] = u[:, 2] < pm
    sampled[:, 3] = np.minimum((np.cumsum(pp, axis=1) <= u[:, 3:4]).sum(axis=1), N_PRICE - 1)
    sampled[:, 4] = np.minimum((np.cumsum(pv, axis=1) <= u[:, 4:5]).sum(axis=1), N_VOLUME - 1)
    return enforce_mo_rule(sampled), sampled


def enforce_mo_rule(orders: np.ndarray) -> np.ndarray:
    out = np.array(orders, dtype=np.int64, copy=True)
    out[out[:, 2] == 1, 3] = 0
    return out


def sample_order(p: Policy, rng: np.random.Generator, row: int = 0) -> Order:
    emitted, _ = sample_orders(
        Policy(*(np.atleast_1d(f[row : row + 1]) if f.ndim == 1 else f[row : row + 1] for f in _fields(p))), rng
    )
    return Order(*map(int, emitted[0]))


def _fields(p: Policy):
    return (p.logit_side, p.logit_action, p.logit_mo, p.logits_price, p.logits_volume)


def joint_distribution(p: Policy, row: int = 0) -> np.ndarray:
    """All 12,800 joint class probabilities of one policy row (enumeration)."""
    ps, pa, pm, pp, pv = (f[row] for f in p.factor_probs())
    cls = orders_of_indices(np.arange(N_CLASSES))
    return (
        np.where(cls[:, 0] == 1, ps, 1 - ps)
        * np.where(cls[:, 1] == 1, pa, 1 - pa)
        * np.where(cls[:, 2] == 1, pm, 1 - pm)
        * pp[cls[:, 3]]
        * pv[cls[:, 4]]
    )
