"""Softmax bandit used to validate the REINFORCE-with-baseline update in isolation."""
from __future__ import annotations

import numpy as np

from ..numcore import Tensor, log_softmax, precision
from ..numcore.tensor import softmax_np
from .losses import batch_baseline, generator_loss


def reinforce_gradient(theta: np.ndarray, rewards: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Ascent direction (r - B) * grad ln pi(a), averaged over one batch of sampled actions.

    Computed through the same loss/autodiff path the generator update uses;
    the descent gradient of that loss is negated.
    """
    with precision(np.float64):
        t = Tensor(theta, requires_grad=True, dtype=np.float64)
        logp = log_softmax(t.reshape(1, -1), axis=1)[np.zeros(len(actions), dtype=int), actions]
        r = rewards[actions]
        loss = generator_loss(r, batch_baseline(r), -logp)
        loss.backward()
    return -t.grad


def analytic_gradient(theta: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """d/dtheta E_pi[r] = pi * (r - E_pi[r]) for a softmax policy."""
    pi = softmax_np(theta)
    return pi * (rewards - pi @ rewards)


def reinforce_bandit_check(
    rewards, steps: int = 10_000, lr: float = 0.1, batch: int = 32, seed: int = 0, theta0=None
) -> np.ndarray:
    """Train softmax logits with theta <- theta + lr * (r - B) grad ln pi(a); return final probabilities."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size < 2:
        raise ValueError("bandit needs at least 2 classes")
    rng = np.random.default_rng(seed)
    theta = np.zeros(rewards.size) if theta0 is None else np.array(theta0, dtype=float)
    for _ in range(steps):
        pi = softmax_np(theta)
        actions = rng.choice(rewards.size, size=batch, p=pi)
        theta = theta + lr * reinforce_gradient(theta, rewards, actions)
    return softmax_np(theta)
