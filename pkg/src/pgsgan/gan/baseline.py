from __future__ import annotations

import numpy as np

from ..orderdomain import MAX_CLASS


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_to_discrete(values) -> np.ndarray:
    """Continuous baseline outputs [n, 5] -> valid discrete orders [n, 5].

    Binaries are 1 when >= 0.5; price/volume are rounded half away from zero
    and clipped to [0, 39]; market orders get price class 0.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty(v.shape, dtype=np.int64)
    out[:, :3] = v[:, :3] >= 0.5
    out[:, 3:] = np.clip(round_half_away(v[:, 3:]), 0, MAX_CLASS).astype(np.int64)
    out[out[:, 2] == 1, 3] = 0
    return out
