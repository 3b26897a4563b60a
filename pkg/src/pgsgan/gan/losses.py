"""Critic/generator objectives for the plain (Wasserstein) and hinge variants."""
from __future__ import annotations

import numpy as np

from ..numcore import Tensor, relu

VARIANTS = ("plain", "hinge")

LOSS_FORMULAS = {
    "plain": "critic=mean(c_fake)-mean(c_real); generator=mean((c_fake-mean(c_fake))*nll_fake)",
    "hinge": "critic=mean(max(1+c_fake,0))+mean(max(1-c_real,0)); generator=mean((c_fake-mean(c_real))*nll_fake)",
}


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"loss variant must be one of {VARIANTS}, got {variant!r}")


def critic_loss(c_fake, c_real, variant: str = "plain"):
    """Critic loss; works on numpy arrays or Tensors (then differentiable)."""
    _check_variant(variant)
    if len(c_fake) == 0 or len(c_real) == 0:
        raise ValueError("critic_loss needs non-empty fake and real batches")
    if isinstance(c_fake, Tensor) or isinstance(c_real, Tensor):
        c_fake = c_fake if isinstance(c_fake, Tensor) else Tensor(np.asarray(c_fake, dtype=c_real.dtype))
        c_real = c_real if isinstance(c_real, Tensor) else Tensor(np.asarray(c_real, dtype=c_fake.dtype))
        if variant == "plain":
            return c_fake.mean() - c_real.mean()
        return relu(c_fake + 1.0).mean() + relu(1.0 - c_real).mean()
    c_fake, c_real = np.asarray(c_fake, dtype=float), np.asarray(c_real, dtype=float)
    if variant == "plain":
        return float(c_fake.mean() - c_real.mean())
    return float(np.maximum(1.0 + c_fake, 0).mean() + np.maximum(1.0 - c_real, 0).mean())


def batch_baseline(c_fake) -> float:
    c = np.asarray(c_fake, dtype=float)
    if c.size == 0:
        raise ValueError("baseline of an empty batch")
    return float(c.mean())


def generator_baseline(variant: str, c_fake, c_real=None) -> float:
    """Plain: batch mean of the fake scores. Hinge: batch mean of the real scores.

    Under the hinge critic the real scores sit at the +1 margin, so the fake
    rewards keep a non-zero advantage even when the critic has collapsed all
    fake scores to one value.
    """
    _check_variant(variant)
    if variant == "plain":
        return batch_baseline(c_fake)
    if c_real is None:
        raise ValueError("hinge baseline needs the real-batch critic scores")
    return batch_baseline(c_real)


def generator_loss(c_fake, baseline, nll, reduce: bool = True):
    """(c_fake - baseline) * nll with the advantage treated as a constant.

    With a Tensor ``nll`` the result is differentiable only through ``nll``.
    """
    if isinstance(nll, Tensor):
        adv = (np.asarray(c_fake, dtype=float) - float(np.mean(baseline))).astype(nll.dtype)
        per = nll * adv
        return per.mean() if reduce else per
    adv = np.asarray(c_fake, dtype=float) - np.asarray(baseline, dtype=float)
    per = adv * np.asarray(nll, dtype=float)
    return float(np.mean(per)) if reduce else per
