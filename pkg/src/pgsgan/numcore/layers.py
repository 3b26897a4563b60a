"""Layer objects holding parameters and buffers."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype, leaky_relu


class Module:
    """Minimal container: parameters are grad-flagged Tensors, buffers are numpy arrays."""

    training: bool = True

    def __init__(self):
        self._buffer_names: list[str] = []
        self.training = True

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)
        self._buffer_names.append(name)

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_power_iters(self, n: int) -> None:
        for m in self.modules():
            if isinstance(m, SpectralMixin):
                m.power_iters = n

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


INIT_POWER_ITERS = 15


class SpectralMixin:
    """Keeps power-iteration vectors for ``self.weight`` and normalizes it on use."""

    power_iters = 1

    def _init_spectral(self, rng: np.random.Generator, spectral: bool) -> None:
        self.spectral = spectral
        if spectral:
            out = self.weight.shape[0]
            rest = int(np.prod(self.weight.shape[1:]))
            u = rng.standard_normal(out)
            v = rng.standard_normal(rest)
            self.register_buffer("sn_u", u / np.linalg.norm(u))
            self.register_buffer("sn_v", v / np.linalg.norm(v))
            # warm start so sigma is meaningful even before the first training step
            F.power_iterate(self.weight.data.reshape(out, -1).astype(np.float64), self.sn_u, self.sn_v, INIT_POWER_ITERS)

    def effective_weight(self) -> Tensor:
        if not self.spectral:
            return self.weight
        update = self.training and self.power_iters > 0
        return F.spectral_normalize(self.weight, self.sn_u, self.sn_v, self.power_iters, update)


class Linear(Module, SpectralMixin):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, spectral: bool = True, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _uniform(rng, (n_out, n_in), bound)
        self.bias = _uniform(rng, (n_out,), bound) if bias else None
        self._init_spectral(rng, spectral)

    def forward(self, x: Tensor) -> Tensor:
        return F.forward_linear(x, self.effective_weight(), self.bias)


class Conv1d(Module, SpectralMixin):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
        padding: int = 0,
        mode: str = "zero",
        spectral: bool = True,
    ):
        super().__init__()
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.weight = _uniform(rng, (c_out, c_in, kernel), bound)
        self.bias = _uniform(rng, (c_out,), bound)
        self.stride, self.dilation, self.padding, self.mode = stride, dilation, padding, mode
        self._init_spectral(rng, spectral)

    def forward(self, x: Tensor) -> Tensor:
        return F.forward_conv1d(
            x, self.effective_weight(), self.bias, self.stride, self.dilation, self.padding, self.mode
        )


class AvgPool1d(Module):
    def __init__(self, window: int, stride: int | None = None):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x: Tensor) -> Tensor:
        return F.forward_avg_pool(x, self.window, self.stride)


class BatchNorm(Module):
    momentum = 0.1

    def __init__(self, n: int):
        super().__init__()
        dt = get_default_dtype()
        self.gamma = Tensor(np.ones(n, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=dt), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(n))
        self.register_buffer("running_var", np.ones(n))

    def forward(self, x: Tensor) -> Tensor:
        return F.forward_batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum
        )


class LayerNorm(Module):
    def __init__(self, n: int):
        super().__init__()
        dt = get_default_dtype()
        self.gamma = Tensor(np.ones(n, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=dt), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.forward_layer_norm(x, self.gamma, self.beta)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return leaky_relu(x, self.slope)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def make_norm(kind: str, n: int) -> Module:
    if kind == "batch":
        return BatchNorm(n)
    if kind == "layer":
        return LayerNorm(n)
    raise ValueError(f"unknown norm {kind!r}")
