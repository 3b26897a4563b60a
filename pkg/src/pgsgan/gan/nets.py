"""Generator, critic and continuous-baseline networks.

Both the generator and the critic run the 20-step history through the same
kind of conditional encoder (8 convolutions with two average-pooling stages),
concatenate it with the current quote features and their own extra input
(seed or order), then mix the vector with dilated circular convolutions
before the linear layers. Every conv/linear weight is spectrally normalised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import AvgPool1d, Conv1d, LeakyReLU, Linear, Module, Tensor, concat, make_norm, sigmoid
from ..orderdomain import HISTORY, MAX_CLASS, N_FEATURES, N_PRICE, N_VOLUME

N_LOGITS = 3 + N_PRICE + N_VOLUME
SEED_DIM = 128


@dataclass
class NetConfig:
    enc_channels: int = 45
    mix_channels: int = 8
    mix_length: int = 16
    gen_hidden: int = 141
    critic_hidden: int = 286
    seed_dim: int = SEED_DIM
    slope: float = 0.2
    gen_norm: str = "batch"
    critic_norm: str = "layer"

    def reduced(self, **overrides) -> "NetConfig":
        small = dict(enc_channels=16, mix_channels=4, mix_length=16, gen_hidden=64, critic_hidden=64)
        small.update(overrides)
        return NetConfig(**{**self.__dict__, **small})


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class ConditionEncoder(Module):
    """[B, 20, 7] history -> [B, channels * 5] features."""

    def __init__(self, channels: int, norm: str, rng: np.random.Generator, slope: float = 0.2):
        super().__init__()
        c = channels
        ins = [N_FEATURES] + [c] * 7
        self.convs = [Conv1d(i, c, 3, rng, padding=1) for i in ins]
        self.norms = [make_norm(norm, c) for _ in ins]
        self.pool1 = AvgPool1d(2, 2)
        self.pool2 = AvgPool1d(2, 2)
        self.act = LeakyReLU(slope)
        self.out_dim = c * (HISTORY // 4)

    def forward(self, history) -> Tensor:
        x = _as_tensor(history, self.convs[0].weight.dtype).transpose(0, 2, 1)
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = self.act(norm(conv(x)))
            if i == 3:
                x = self.pool1(x)
            elif i == 5:
                x = self.pool2(x)
        return x.reshape(x.shape[0], -1)


class MixingStage(Module):
    """Linear lift of the concatenated vector to a [C, L] map, then dilated circular convs."""

    def __init__(self, n_in: int, channels: int, length: int, norm: str, rng: np.random.Generator, slope: float = 0.2):
        super().__init__()
        self.channels, self.length = channels, length
        self.lift = Linear(n_in, channels * length, rng)
        self.convs = [
            Conv1d(channels, channels, 3, rng, dilation=d, padding=d, mode="circular") for d in (1, 2, 4, 1, 2, 4)
        ]
        self.norms = [make_norm(norm, channels) for _ in self.convs]
        self.act = LeakyReLU(slope)
        self.out_dim = channels * length

    def forward(self, v: Tensor) -> Tensor:
        x = self.act(self.lift(v)).reshape(v.shape[0], self.channels, self.length)
        for conv, norm in zip(self.convs, self.norms):
            x = self.act(norm(conv(x)))
        return x.reshape(v.shape[0], -1)


class Generator(Module):
    """Conditional policy network: (history, quotes, seed) -> 83 logits.

    Logit layout: [side, action, is_mo, price_0..39, volume_0..39]; the three
    binaries are single logits for P(class 1).
    """

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConditionEncoder(cfg.enc_channels, cfg.gen_norm, rng, cfg.slope)
        self.mix = MixingStage(self.encoder.out_dim + 2 + cfg.seed_dim, cfg.mix_channels, cfg.mix_length, cfg.gen_norm, rng, cfg.slope)
        self.fc1 = Linear(self.mix.out_dim, cfg.gen_hidden, rng)
        self.fc2 = Linear(cfg.gen_hidden, cfg.gen_hidden, rng)
        self.head_binary = Linear(cfg.gen_hidden, 3, rng)
        self.head_classes = Linear(cfg.gen_hidden, N_PRICE + N_VOLUME, rng)
        self.act = LeakyReLU(cfg.slope)

    def encode(self, history) -> Tensor:
        return self.encoder(history)

    def head(self, encoded: Tensor, quotes, z) -> Tensor:
        v = concat([encoded, _as_tensor(quotes, encoded.dtype), _as_tensor(z, encoded.dtype)], axis=1)
        h = self.act(self.fc2(self.act(self.fc1(self.mix(v)))))
        return concat([self.head_binary(h), self.head_classes(h)], axis=1)

    def forward(self, history, quotes, z) -> Tensor:
        return self.head(self.encode(history), quotes, z)


class Critic(Module):
    """(history, quotes, encoded order) -> scalar score per row."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConditionEncoder(cfg.enc_channels, cfg.critic_norm, rng, cfg.slope)
        self.mix = MixingStage(self.encoder.out_dim + 2 + N_FEATURES, cfg.mix_channels, cfg.mix_length, cfg.critic_norm, rng, cfg.slope)
        self.fc1 = Linear(self.mix.out_dim, cfg.critic_hidden, rng)
        self.out = Linear(cfg.critic_hidden, 1, rng)
        self.act = LeakyReLU(cfg.slope)

    def encode(self, history) -> Tensor:
        return self.encoder(history)

    def head(self, enc: Tensor, quotes, order_features) -> Tensor:
        v = concat([enc, _as_tensor(quotes, enc.dtype), _as_tensor(order_features, enc.dtype)], axis=1)
        return self.out(self.act(self.fc1(self.mix(v)))).reshape(-1)

    def forward(self, history, quotes, order_features) -> Tensor:
        return self.head(self.encode(history), quotes, order_features)


class ContinuousGenerator(Module):
    """DCGAN-style baseline: emits (side, action, is_mo) in [0,1]^3 and (price, volume) in [0,39]^2."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConditionEncoder(cfg.enc_channels, cfg.gen_norm, rng, cfg.slope)
        self.mix = MixingStage(self.encoder.out_dim + 2 + cfg.seed_dim, cfg.mix_channels, cfg.mix_length, cfg.gen_norm, rng, cfg.slope)
        self.fc1 = Linear(self.mix.out_dim, cfg.gen_hidden, rng)
        self.fc2 = Linear(cfg.gen_hidden, cfg.gen_hidden, rng)
        self.out = Linear(cfg.gen_hidden, 5, rng)
        self.act = LeakyReLU(cfg.slope)
        self._scale = np.array([1.0, 1.0, 1.0, MAX_CLASS, MAX_CLASS])

    def encode(self, history) -> Tensor:
        return self.encoder(history)

    def head(self, encoded: Tensor, quotes, z) -> Tensor:
        v = concat([encoded, _as_tensor(quotes, encoded.dtype), _as_tensor(z, encoded.dtype)], axis=1)
        h = self.act(self.fc2(self.act(self.fc1(self.mix(v)))))
        return sigmoid(self.out(h)) * self._scale.astype(h.dtype)

    def forward(self, history, quotes, z) -> Tensor:
        return self.head(self.encode(history), quotes, z)
