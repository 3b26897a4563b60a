"""Adversarial training: critic updates, REINFORCE generator updates, checkpoints, logs.

RNG streams are all derived from the master seed (see ``derive_rng``):
``init/generator``, ``init/critic`` for weights, ``critic/<n>`` for the n-th
critic update, ``generator/<n>`` for the n-th generator update,
``batcher/<epoch>`` for shuffles and ``eval/<situation>`` inside evaluation.
No RNG state needs saving, so a resumed run replays the uninterrupted one.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..dataflow import Batcher, DataError, Windows, derive_rng, read_kv, write_kv
from ..numcore import AdamState, NonFiniteError, ParamStore, Tensor, adam_step, concat, no_grad
from ..numcore.store import CheckpointError, load_arrays, save_arrays
from ..orderdomain import MAX_CLASS, Condition, encode_order_for_critic
from .losses import LOSS_FORMULAS, critic_loss, generator_baseline, generator_loss
from .nets import Critic, ContinuousGenerator, Generator, NetConfig
from .policy import Policy, entropy, nll, nll_tensor, sample_orders

log = logging.getLogger(__name__)

MODELS = ("pgsgan", "pgsgan-hl", "dcgan-baseline")


class TrainingAborted(RuntimeError):
    """Numerical abort; a checkpoint was written to ``checkpoint``."""

    def __init__(self, msg: str, checkpoint: Path | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    model: str = "pgsgan"
    batch_size: int = 2048
    lr: float = 1e-5
    critic_lr: float = 0.0  # 0 = same as lr
    max_epochs: int = 5000
    max_steps: int = 0  # generator steps; 0 = unlimited
    critic_steps: int = 5
    seed: int = 0
    checkpoint_every: int = 1  # epochs
    valid_seeds: int = 10
    valid_max_windows: int = 0  # 0 = all validation windows
    net: NetConfig = field(default_factory=NetConfig)

    @property
    def variant(self) -> str:
        return "hinge" if self.model == "pgsgan-hl" else "plain"

    def validate(self) -> "TrainConfig":
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("batch_size", "max_epochs", "critic_steps", "checkpoint_every", "valid_seeds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.critic_lr < 0:
            raise ValueError("critic_lr must be >= 0")
        if self.max_steps < 0 or self.valid_max_windows < 0:
            raise ValueError("max_steps and valid_max_windows must be >= 0")
        return self

    def flat(self) -> dict[str, str]:
        out = {k: v for k, v in asdict(self).items() if k != "net"}
        out.update({f"net.{k}": v for k, v in asdict(self.net).items()})
        return {k: str(v) for k, v in out.items()}

    @classmethod
    def from_flat(cls, items: dict[str, str]) -> "TrainConfig":
        def conv(typ: str, v: str):
            return int(v) if typ == "int" else float(v) if typ == "float" else v

        tf = {f.name: f.type for f in fields(cls) if f.name != "net"}
        nf = {f.name: f.type for f in fields(NetConfig)}
        kw, nk = {}, {}
        for k, v in items.items():
            if k.startswith("net."):
                if k[4:] not in nf:
                    raise ValueError(f"unknown key {k!r}")
                nk[k[4:]] = conv(nf[k[4:]], v)
            elif k in tf:
                kw[k] = conv(tf[k], v)
            else:
                raise ValueError(f"unknown key {k!r}")
        return cls(**kw, net=NetConfig(**nk)).validate()


def _encode_repeated(net, history, quotes, z, repeats: int) -> Tensor:
    """Run ``net`` with each history/quote row repeated ``repeats`` times, encoding it once."""
    enc = net.encode(history)
    if repeats > 1:
        enc = Tensor(np.repeat(enc.data, repeats, axis=0))
        quotes = np.repeat(np.asarray(quotes), repeats, axis=0)
    return net.head(enc, quotes, z)


def _batched(cond, order=None):
    """Accept a Condition (single row) or batched (history, quotes) arrays."""
    if isinstance(cond, Condition):
        hist, quotes = cond.history[None], cond.quotes[None]
    else:
        hist, quotes = cond
    if order is None:
        return hist, quotes
    return hist, quotes, np.atleast_2d(np.asarray(order))


def generate_policy(net: Generator, cond, z) -> Policy:
    """Policy of ``net`` for one Condition (or a batch) and seed(s) z [n, 128]."""
    hist, quotes = _batched(cond)
    with no_grad():
        return Policy.from_logits(net(hist, quotes, np.atleast_2d(z)))


def critic_score(net: Critic, cond, order) -> np.ndarray:
    """Critic scores of discrete orders [n, 5] under their conditions."""
    hist, quotes, o = _batched(cond, order)
    with no_grad():
        return net(hist, quotes, encode_order_for_critic(o, quotes)).data.astype(np.float64)


class PolicyModel:
    """Evaluation view of a Generator: numpy-in, Policy-out."""

    def __init__(self, net: Generator):
        self.net = net
        self.seed_dim = net.cfg.seed_dim

    def policy(self, history, quotes, z, repeats: int = 1) -> Policy:
        with no_grad():
            return Policy.from_logits(_encode_repeated(self.net, history, quotes, z, repeats))


class ContinuousModel:
    def __init__(self, net: ContinuousGenerator):
        self.net = net
        self.seed_dim = net.cfg.seed_dim

    def continuous(self, history, quotes, z, repeats: int = 1) -> np.ndarray:
        with no_grad():
            return _encode_repeated(self.net, history, quotes, z, repeats).data.astype(np.float64)


class TrainState:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg.validate()
        net_cls = ContinuousGenerator if cfg.model == "dcgan-baseline" else Generator
        self.generator = net_cls(cfg.net, derive_rng(cfg.seed, "init", "generator"))
        self.critic = Critic(cfg.net, derive_rng(cfg.seed, "init", "critic"))
        self.gen_params = ParamStore.from_module(self.generator)
        self.critic_params = ParamStore.from_module(self.critic)
        self.gen_opt = AdamState(lr=cfg.lr)
        self.critic_opt = AdamState(lr=cfg.critic_lr or cfg.lr)
        self.epoch = 0  # completed epochs
        self.critic_steps = 0
        self.gen_steps = 0

    @property
    def is_policy(self) -> bool:
        return isinstance(self.generator, Generator)

    def eval_model(self):
        return PolicyModel(self.generator) if self.is_policy else ContinuousModel(self.generator)

    # -- checkpoint -------------------------------------------------------------
    def arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "counters": np.array([self.epoch, self.critic_steps, self.gen_steps], dtype=np.int64)
        }
        for tag, mod in (("gen", self.generator), ("critic", self.critic)):
            out.update({f"{tag}/{k}": p.data for k, p in mod.named_parameters()})
            out.update({f"{tag}.buf/{k}": b for k, b in mod.named_buffers()})
        out.update(self.gen_opt.to_arrays("adam.gen/"))
        out.update(self.critic_opt.to_arrays("adam.critic/"))
        return out

    def load_arrays(self, arrays) -> None:
        try:
            self.epoch, self.critic_steps, self.gen_steps = (int(x) for x in arrays["counters"])
            for tag, mod in (("gen", self.generator), ("critic", self.critic)):
                for k, p in mod.named_parameters():
                    src = arrays[f"{tag}/{k}"]
                    if src.shape != p.shape:
                        raise CheckpointError(f"shape mismatch for {tag}/{k}: {src.shape} vs {p.shape}")
                    p.data[...] = src
                for k, b in mod.named_buffers():
                    b[...] = arrays[f"{tag}.buf/{k}"]
            self.gen_opt.load_arrays(arrays, "adam.gen/")
            self.critic_opt.load_arrays(arrays, "adam.critic/")
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks entry {exc}") from None

    def save(self, path) -> Path:
        path = Path(path)
        save_arrays(path, self.arrays())
        manifest = {
            "format": "PGSG",
            "epoch": self.epoch,
            "critic_steps": self.critic_steps,
            "generator_steps": self.gen_steps,
            "loss_formula": LOSS_FORMULAS[self.cfg.variant],
            "rng_streams": "init/generator init/critic critic/<n> generator/<n> batcher/<epoch> valid/<epoch> eval/<situation>",
            **self.cfg.flat(),
        }
        write_kv(path.with_suffix(".manifest"), manifest)
        return path

    @classmethod
    def load(cls, path) -> "TrainState":
        path = Path(path)
        man = path.with_suffix(".manifest")
        if not man.exists():
            raise CheckpointError(f"manifest {man} not found")
        items = read_kv(man)
        cfg_items = {k: v for k, v in items.items() if k in TrainConfig.__dataclass_fields__ or k.startswith("net.")}
        state = cls(TrainConfig.from_flat(cfg_items))
        state.load_arrays(load_arrays(path))
        return state


# -- sampling helpers ---------------------------------------------------------------
def fake_features(emitted: np.ndarray, quotes: np.ndarray) -> np.ndarray:
    return encode_order_for_critic(emitted, quotes)


def continuous_features(out: Tensor, quotes: np.ndarray) -> Tensor:
    scale = np.array([1, 1, 1, 1 / MAX_CLASS, 1 / MAX_CLASS], dtype=out.dtype)
    return concat([out * scale, Tensor(np.asarray(quotes, dtype=out.dtype))], axis=1)


def _seeds(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def _critic_update(state: TrainState, batch: Windows) -> float:
    cfg = state.cfg
    rng = derive_rng(cfg.seed, "critic", state.critic_steps)
    n = len(batch)
    z = _seeds(rng, n, cfg.net.seed_dim)
    with no_grad():
        out = state.generator(batch.history, batch.quotes, z)
        if state.is_policy:
            fake = fake_features(sample_orders(Policy.from_logits(out), rng)[0], batch.quotes)
        else:
            fake = continuous_features(out, batch.quotes).data
    real = encode_order_for_critic(batch.target, batch.quotes)
    # the history encoding is shared by the fake and real rows (the critic norm is per-row)
    enc = state.critic.encode(batch.history)
    scores = state.critic.head(concat([enc, enc], axis=0), np.concatenate([batch.quotes, batch.quotes]), np.concatenate([fake, real]))
    loss = critic_loss(scores[:n], scores[n:], cfg.variant)
    state.critic_params.zero_grad()
    loss.backward()
    adam_step(state.critic_params, state.critic_opt)
    state.critic_steps += 1
    return loss.item()


def policy_gradient_loss(
    logits: Tensor, sampled: np.ndarray, c_fake: np.ndarray, variant: str, c_real: np.ndarray | None = None
) -> Tensor:
    """Mean (C(x~) - B) * NLL(x~) over the batch, differentiable through the logits only."""
    base = generator_baseline(variant, c_fake, c_real)
    return generator_loss(c_fake, base, nll_tensor(logits, sampled))


def _generator_update(state: TrainState, batch: Windows) -> dict[str, float]:
    cfg = state.cfg
    rng = derive_rng(cfg.seed, "generator", state.gen_steps)
    n = len(batch)
    z = _seeds(rng, n, cfg.net.seed_dim)
    state.gen_params.zero_grad()
    if state.is_policy:
        logits = state.generator(batch.history, batch.quotes, z)
        pol = Policy.from_logits(logits)
        emitted, sampled = sample_orders(pol, rng)
        with no_grad():
            c_fake = state.critic(batch.history, batch.quotes, fake_features(emitted, batch.quotes)).data.astype(np.float64)
            c_real = None
            if cfg.variant == "hinge":
                real = encode_order_for_critic(batch.target, batch.quotes)
                c_real = state.critic(batch.history, batch.quotes, real).data.astype(np.float64)
        loss = policy_gradient_loss(logits, sampled, c_fake, cfg.variant, c_real)
        loss.backward()
        metrics = {
            "nll_real_mean": float(nll(pol, batch.target).mean()),
            "entropy_mean": float(entropy(pol).mean()),
        }
    else:
        out = state.generator(batch.history, batch.quotes, z)
        scores = state.critic(batch.history, batch.quotes, continuous_features(out, batch.quotes))
        loss = -scores.mean()
        loss.backward()
        state.critic_params.zero_grad()
        metrics = {"nll_real_mean": math.nan, "entropy_mean": math.nan}
    adam_step(state.gen_params, state.gen_opt)
    state.gen_steps += 1
    metrics["loss_g"] = loss.item()
    return metrics


def train_step(state: TrainState, batch: Windows) -> dict[str, float]:
    """``critic_steps`` critic updates (fresh fakes each), then one generator update."""
    losses = [_critic_update(state, batch) for _ in range(state.cfg.critic_steps)]
    metrics = _generator_update(state, batch)
    metrics["loss_c"] = float(np.mean(losses))
    for k in ("loss_c", "loss_g"):
        if not math.isfinite(metrics[k]):
            raise NonFiniteError(f"{k} is not finite")
    return metrics


# -- loop ----------------------------------------------------------------------------
METRIC_HEADER = ("epoch", "step", "loss_c", "loss_g", "nll_real_mean", "entropy_mean")
VALID_HEADER = ("epoch", "kld", "mse", "nll_mean", "entropy_mean")


def _fmt(x: float) -> str:
    return repr(float(x))


def _truncate_log(path: Path, header, max_epoch: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [r for r in rows[1:] if r and int(r[0]) <= max_epoch]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(keep)


def _append(path: Path, header, row) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(header)
        w.writerow(row)


def fit(
    state: TrainState,
    train: Windows,
    valid: Windows | None,
    out_dir,
    max_epochs: int | None = None,
    time_budget: float | None = None,
) -> TrainState:
    """Run epochs until ``max_epochs`` (default cfg.max_epochs) or ``max_steps``.

    Writes ``metrics.csv``, ``valid.csv`` and ``checkpoints/epoch_XXXXX.pgsg``
    under ``out_dir``; on a non-finite value writes ``checkpoints/abort.pgsg``
    and raises TrainingAborted.
    """
    from ..evalkit import evaluate_generator

    cfg = state.cfg
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_path, valid_path = out / "metrics.csv", out / "valid.csv"
    _truncate_log(metrics_path, METRIC_HEADER, state.epoch)
    _truncate_log(valid_path, VALID_HEADER, state.epoch)
    write_kv(out / "run.txt", {"model": cfg.model, "loss_variant": cfg.variant, "loss_formula": LOSS_FORMULAS[cfg.variant]})
    if len(train) < cfg.batch_size:
        raise DataError(f"{len(train)} training windows < batch size {cfg.batch_size}")
    batcher = Batcher(len(train), cfg.batch_size, cfg.seed)
    last = max_epochs if max_epochs is not None else cfg.max_epochs
    t0 = time.monotonic()
    state.generator.train()
    state.critic.train()
    while state.epoch < last:
        epoch = state.epoch + 1
        try:
            for idx in batcher.epoch(epoch):
                m = train_step(state, train.take(idx))
                _append(
                    metrics_path,
                    METRIC_HEADER,
                    (epoch, state.gen_steps, _fmt(m["loss_c"]), _fmt(m["loss_g"]), _fmt(m["nll_real_mean"]), _fmt(m["entropy_mean"])),
                )
                if cfg.max_steps and state.gen_steps >= cfg.max_steps:
                    break
        except (NonFiniteError, FloatingPointError) as exc:
            path = state.save(ckpt_dir / "abort.pgsg")
            raise TrainingAborted(f"numerical abort in epoch {epoch}: {exc}", path) from exc
        state.epoch = epoch
        if valid is not None and len(valid):
            v = valid if not cfg.valid_max_windows else valid.take(np.arange(min(len(valid), cfg.valid_max_windows)))
            state.generator.eval()
            state.critic.eval()
            rep = evaluate_generator(state.eval_model(), v, cfg.valid_seeds, int(derive_rng(cfg.seed, "valid", epoch).integers(2**31)))
            state.generator.train()
            state.critic.train()
            _append(
                valid_path,
                VALID_HEADER,
                (epoch, _fmt(rep.kld), _fmt(rep.mse), _fmt(rep.nll_mean if rep.nll_mean is not None else math.nan),
                 _fmt(rep.entropy_mean if rep.entropy_mean is not None else math.nan)),
            )
            log.info("epoch %d step %d valid kld=%s mse=%.3g entropy=%s", epoch, state.gen_steps, rep.kld, rep.mse, rep.entropy_mean)
        done = (cfg.max_steps and state.gen_steps >= cfg.max_steps) or state.epoch >= last
        over_time = time_budget is not None and time.monotonic() - t0 > time_budget
        if epoch % cfg.checkpoint_every == 0 or done or over_time:
            state.save(ckpt_dir / f"epoch_{epoch:05d}.pgsg")
        if done or over_time:
            break
    return state


def load_model(path):
    """Load a checkpoint and return its evaluation model (eval mode)."""
    state = TrainState.load(path)
    state.generator.eval()
    state.critic.eval()
    return state
