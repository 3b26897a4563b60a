from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import ParamStore
from .tensor import NonFiniteError


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}step": np.array([self.step], dtype=np.int64)}
        for k in self.m:
            out[f"{prefix}m/{k}"] = self.m[k]
            out[f"{prefix}v/{k}"] = self.v[k]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.step = int(arrays[f"{prefix}step"][0])
        self.m = {k[len(prefix) + 2 :]: a.copy() for k, a in arrays.items() if k.startswith(prefix + "m/")}
        self.v = {k[len(prefix) + 2 :]: a.copy() for k, a in arrays.items() if k.startswith(prefix + "v/")}


def adam_step(params: ParamStore, state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``; a missing
    gradient counts as zero. Nothing is modified if any gradient is non-finite.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}; Adam step rejected")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
