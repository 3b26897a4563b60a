"""Differentiable network primitives: linear, 1-D conv, pooling, normalisation."""
from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor, _make, _needs_grad, as_tensor, matmul, maximum, mean

NORM_EPS = 1e-5
SIGMA_FLOOR = 1e-12


def forward_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T + b for x [batch, in], w [out, in], b [out]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(
            f"linear: input {x.shape} incompatible with weight {w.shape} (need x[batch, {w.shape[-1]}])"
        )
    y = matmul(x, w.T)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b
    return y


def conv_output_length(length: int, kernel: int, stride: int = 1, dilation: int = 1, padding: int = 0) -> int:
    span = dilation * (kernel - 1) + 1
    padded = length + 2 * padding
    if span > padded:
        raise ValueError(
            f"conv1d: receptive field {span} (kernel {kernel}, dilation {dilation}) "
            f"exceeds padded input length {padded}"
        )
    return (padded - span) // stride + 1


def _pad_index(length: int, padding: int, mode: str) -> np.ndarray:
    pos = np.arange(-padding, length + padding)
    if mode == "circular":
        return pos % length
    if mode == "zero":
        return pos
    raise ValueError(f"unknown padding mode {mode!r}")


def forward_conv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
    mode: str = "zero",
) -> Tensor:
    """Cross-correlation of x [B, C, L] with w [O, C, K].

    ``mode="circular"`` wraps the padded positions modulo L instead of filling zeros.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv1d: stride and dilation must be >= 1, padding >= 0")
    B, C, L = x.shape
    O, _, K = w.shape
    if mode == "circular" and padding > L:
        raise ValueError(f"conv1d: circular padding {padding} longer than input {L}")
    L_out = conv_output_length(L, K, stride, dilation, padding)
    src = _pad_index(L, padding, mode)
    if mode == "zero" and padding:
        xp = np.zeros((B, C, L + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + L] = x.data
    else:
        xp = x.data[:, :, src] if padding else x.data
    taps = np.arange(K)[:, None] * dilation + np.arange(L_out)[None, :] * stride  # [K, L_out]
    cols = xp[:, :, taps]  # [B, C, K, L_out]
    cols2 = cols.transpose(0, 3, 1, 2).reshape(B * L_out, C * K)
    w2 = w.data.reshape(O, C * K)
    out = (cols2 @ w2.T).reshape(B, L_out, O).transpose(0, 2, 1)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 1).reshape(B * L_out, O)
        gw = (g2.T @ cols2).reshape(O, C, K) if _needs_grad(w) else None
        gb = g.sum(axis=(0, 2)) if b is not None and _needs_grad(b) else None
        gx = None
        if _needs_grad(x):
            gcols = (g2 @ w2).reshape(B, L_out, C, K).transpose(0, 2, 3, 1)  # [B, C, K, L_out]
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, taps[k]] += gcols[:, :, k, :]
            if mode == "zero":
                gx = gxp[:, :, padding : padding + L]
            elif padding:
                gx = np.zeros_like(x.data)
                for j, s in enumerate(src):
                    gx[:, :, s] += gxp[:, :, j]
            else:
                gx = gxp
        res = [(x, gx), (w, gw)]
        if b is not None:
            res.append((b, gb))
        return res

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "conv1d")


def forward_avg_pool(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Mean over sliding windows along the last axis of x [B, C, L]."""
    x = as_tensor(x)
    if window < 1:
        raise ValueError("avg_pool: window must be >= 1")
    stride = window if stride is None else stride
    if stride < 1:
        raise ValueError("avg_pool: stride must be >= 1")
    L = x.shape[-1]
    if window > L:
        raise ValueError(f"avg_pool: window {window} larger than length {L}")
    L_out = (L - window) // stride + 1
    taps = np.arange(window)[:, None] + np.arange(L_out)[None, :] * stride
    out = x.data[..., taps].mean(axis=-2)

    def bw(g):
        gx = np.zeros_like(x.data)
        scaled = g / window
        for j in range(window):
            gx[..., taps[j]] += scaled
        return ((x, gx),)

    return _make(np.ascontiguousarray(out), (x,), bw, "avg_pool")


def _normalize(x: Tensor, axes) -> Tensor:
    mu = mean(x, axis=axes, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=axes, keepdims=True)
    return centered / maximum(var, NORM_EPS) ** 0.5


def forward_batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
) -> Tensor:
    """Batch norm over [B, C] or [B, C, L]; running statistics are updated in place when training."""
    x = as_tensor(x)
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch norm in training mode needs batch >= 2")
        xhat = _normalize(x, axes)
        n = int(np.prod([x.shape[a] for a in axes]))
        bmean = x.data.mean(axis=axes)
        bvar = x.data.var(axis=axes) * (n / max(n - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * bmean
        running_var *= 1 - momentum
        running_var += momentum * bvar
    else:
        rm = running_mean.reshape(shape).astype(x.dtype)
        rs = np.sqrt(np.maximum(running_var, NORM_EPS)).reshape(shape).astype(x.dtype)
        xhat = (x - rm) / rs
    return xhat * gamma.reshape(shape) + beta.reshape(shape)


def forward_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-sample normalisation over the feature axis (axis 1) of [B, F] or [B, C, L]."""
    x = as_tensor(x)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    return _normalize(x, (1,)) * gamma.reshape(shape) + beta.reshape(shape)


def _unit(vec: np.ndarray) -> np.ndarray | None:
    norm = float(np.linalg.norm(vec))
    if norm < SIGMA_FLOOR or not np.isfinite(norm):
        return None
    return vec / norm


def power_iterate(w2d: np.ndarray, u: np.ndarray, v: np.ndarray, n_iter: int = 1) -> None:
    """Advance the left/right singular-vector estimates in place."""
    for _ in range(n_iter):
        nv = _unit(w2d.T @ u)
        if nv is None:
            return
        nu = _unit(w2d @ nv)
        if nu is None:
            return
        v[...] = nv
        u[...] = nu


def spectral_normalize(w: Tensor, u: np.ndarray, v: np.ndarray, n_iter: int = 1, update: bool = True) -> Tensor:
    """Return w / sigma where sigma = u^T W v is the power-iteration estimate.

    Weights of rank > 2 are viewed as [out, rest]. u and v are treated as
    constants by the backward pass, as in the usual spectral-norm layer.
    """
    w = as_tensor(w)
    w2d = w.data.reshape(w.shape[0], -1)
    if update and n_iter > 0:
        power_iterate(w2d.astype(np.float64), u, v, n_iter)
    uu = u.astype(w.dtype)
    vv = v.astype(w.dtype)
    outer = (uu[:, None] * vv[None, :]).reshape(w.shape)
    sigma = (w * outer).sum()
    sigma = maximum(sigma, SIGMA_FLOOR)
    out = w / sigma
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("spectral_normalize produced non-finite weights")
    return out
