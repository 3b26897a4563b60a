from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], float], t: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() with respect to every entry of t."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max |a - n| / max(|a|, |n|, floor), so tiny gradients do not blow the ratio up."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-6,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backward() and finite differences over ``tensors``.

    With ``max_entries`` only a random subset of entries per tensor is probed.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t, a in zip(tensors, analytic):
        idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            idx = rng.choice(t.size, size=max_entries, replace=False)
        flat = t.data.reshape(-1)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn().item()
            flat[i] = old - eps
            down = loss_fn().item()
            flat[i] = old
            num[j] = (up - down) / (2 * eps)
        worst = max(worst, max_rel_error(a.reshape(-1)[idx], num, floor))
    return worst
