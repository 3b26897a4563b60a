"""Distribution metrics over the 12,800-class order space and generator evaluation.

Units: KLD and entropy in bits (log base 2); NLL in nats (natural log).
KLD is D(real || fake) and is +inf whenever the fake distribution misses
part of the real support; no smoothing is applied.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataflow import DataError, Windows, derive_rng, write_kv
from .gan.baseline import round_to_discrete
from .gan.policy import BY_CHANCE_ENTROPY, BY_CHANCE_NLL, Policy, entropy, nll, sample_orders
from .numcore import no_grad
from .orderdomain import N_CLASSES, class_index_array

INF_MARKER = "inf"
MARGINALS = (("side", 2), ("action", 2), ("is_mo", 2), ("price", 40), ("volume", 40))


@dataclass
class ClassDistribution:
    probs: np.ndarray
    n_samples: int = 0

    @property
    def is_empty(self) -> bool:
        return self.n_samples == 0 and not self.probs.any()

    @classmethod
    def empty(cls) -> "ClassDistribution":
        return cls(np.zeros(N_CLASSES), 0)


def empirical_distribution(orders) -> ClassDistribution:
    o = np.asarray(orders)
    if o.size == 0:
        return ClassDistribution.empty()
    counts = np.bincount(class_index_array(np.atleast_2d(o)), minlength=N_CLASSES).astype(float)
    return ClassDistribution(counts / counts.sum(), int(counts.sum()))


def _probs(d) -> np.ndarray:
    return d.probs if isinstance(d, ClassDistribution) else np.asarray(d, dtype=float)


def kld(P, Q) -> float:
    """sum P log2(P/Q); terms with P = 0 count 0; +inf if P > 0 where Q = 0."""
    p, q = _probs(P), _probs(Q)
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    return max(float(np.sum(p[support] * np.log2(p[support] / q[support]))), 0.0)


def mse(P, Q) -> float:
    p, q = _probs(P), _probs(Q)
    return float(np.mean((p - q) ** 2))


def marginal_counts(orders: np.ndarray) -> dict[str, np.ndarray]:
    o = np.atleast_2d(np.asarray(orders))
    return {name: np.bincount(o[:, j], minlength=n)[:n] for j, (name, n) in enumerate(MARGINALS)}


def format_value(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float) and math.isinf(x):
        return INF_MARKER
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class EvalReport:
    kld: float
    mse: float
    nll_mean: float | None
    nll_std_mean: float | None
    nll_std_situations: float | None
    entropy_mean: float | None
    n_situations: int
    n_seeds: int
    n_fake: int
    master_seed: int
    real_marginals: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    fake_marginals: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def as_items(self) -> dict[str, str]:
        return {
            "units": "kld=bits entropy=bits nll=nats",
            "kld": format_value(self.kld),
            "mse": format_value(self.mse),
            "nll_mean": format_value(self.nll_mean),
            "nll_std_mean": format_value(self.nll_std_mean),
            "nll_std_situations": format_value(self.nll_std_situations),
            "entropy_mean": format_value(self.entropy_mean),
            "by_chance_nll": format_value(BY_CHANCE_NLL),
            "by_chance_entropy": format_value(BY_CHANCE_ENTROPY),
            "n_situations": str(self.n_situations),
            "n_seeds": str(self.n_seeds),
            "n_fake": str(self.n_fake),
            "master_seed": str(self.master_seed),
        }

    def write(self, out_dir, stem: str = "report") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{stem}.txt"]
        write_kv(paths[0], self.as_items())
        for name, _ in MARGINALS:
            path = out_dir / f"{stem}_hist_{name}.csv"
            real, fake = self.real_marginals[name], self.fake_marginals[name]
            rp = real / max(real.sum(), 1)
            fp = fake / max(fake.sum(), 1)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("class", "count", "real_prob", "fake_prob"))
                for k in range(len(real)):
                    w.writerow((k, int(fake[k]), repr(float(rp[k])), repr(float(fp[k]))))
            paths.append(path)
        return paths


def _situation_draws(seed: int, situation: int, n_seeds: int, seed_dim: int):
    rng = derive_rng(seed, "eval", situation)
    return rng.standard_normal((n_seeds, seed_dim)), rng


def evaluate_generator(model, windows: Windows, n_seeds: int = 100, seed: int = 0, chunk: int = 64) -> EvalReport:
    """Draw ``n_seeds`` fake orders per test situation and compare with the real next orders.

    ``model`` is either a policy model (``policy(history, quotes, z, repeats)
    -> Policy``) or a continuous one (``continuous(history, quotes, z, repeats)
    -> [n * repeats, 5]``), whose outputs are rounded to discrete orders. Each
    history/quote row stands for ``repeats`` consecutive rows of ``z``. Each situation owns the RNG
    stream ``derive_rng(seed, "eval", situation)``; with a fixed ``chunk`` the
    report is bit-reproducible (float32 matmuls may round differently for
    other chunk sizes).
    """
    n = len(windows)
    if n == 0:
        raise DataError("evaluation needs at least one test window")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seed_dim = getattr(model, "seed_dim", 128)
    is_policy = hasattr(model, "policy")
    fakes = np.empty((n, n_seeds, 5), dtype=np.int64)
    nll_all = np.empty((n, n_seeds)) if is_policy else None
    ent_all = np.empty((n, n_seeds)) if is_policy else None
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        zs, rngs = zip(*(_situation_draws(seed, int(i), n_seeds, seed_dim) for i in idx))
        z = np.concatenate(zs)
        hist, quotes = windows.history[idx], windows.quotes[idx]
        with no_grad():
            if is_policy:
                pol = model.policy(hist, quotes, z, repeats=n_seeds)
                real = np.repeat(windows.target[idx], n_seeds, axis=0)
                nll_all[idx] = nll(pol, real).reshape(len(idx), n_seeds)
                ent_all[idx] = entropy(pol).reshape(len(idx), n_seeds)
                for j, rng in enumerate(rngs):
                    rows = slice(j * n_seeds, (j + 1) * n_seeds)
                    sub = Policy(*(f[rows] for f in (pol.logit_side, pol.logit_action, pol.logit_mo, pol.logits_price, pol.logits_volume)))
                    fakes[idx[j]] = sample_orders(sub, rng)[0]
            else:
                fakes[idx] = round_to_discrete(model.continuous(hist, quotes, z, repeats=n_seeds)).reshape(len(idx), n_seeds, 5)
    flat = fakes.reshape(-1, 5)
    real_d = empirical_distribution(windows.target)
    fake_d = empirical_distribution(flat)
    report = EvalReport(
        kld=kld(real_d, fake_d),
        mse=mse(real_d, fake_d),
        nll_mean=float(nll_all.mean()) if is_policy else None,
        nll_std_mean=float(nll_all.std(axis=1).mean()) if is_policy else None,
        nll_std_situations=float(nll_all.mean(axis=1).std()) if is_policy else None,
        entropy_mean=float(ent_all.mean()) if is_policy else None,
        n_situations=n,
        n_seeds=n_seeds,
        n_fake=len(flat),
        master_seed=seed,
        real_marginals=marginal_counts(windows.target),
        fake_marginals=marginal_counts(flat),
    )
    return report


class UniformPolicyModel:
    """Reference generator whose policy is uniform over all 12,800 classes."""

    seed_dim = 128

    def policy(self, history, quotes, z, repeats: int = 1) -> Policy:
        return Policy.uniform(len(history) * repeats)


# -- learning curves ----------------------------------------------------------------
METRIC_COLUMNS = ("epoch", "step", "loss_c", "loss_g", "nll_real_mean", "entropy_mean")
VALID_COLUMNS = ("epoch", "kld", "mse", "nll_mean", "entropy_mean")


def _read_csv(path, columns) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty log")
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = []
        for line_no, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            rec = dict(zip(header, row))
            for c in columns:
                try:
                    float(rec[c])
                except ValueError:
                    raise DataError(f"{path}: line {line_no}: bad {c} value {rec[c]!r}") from None
            rows.append(rec)
    return rows


def learning_curves(metric_log, valid_log=None) -> dict[str, np.ndarray]:
    """Per-epoch means of the step metrics, validation metrics, and by-chance reference columns."""
    rows = _read_csv(metric_log, METRIC_COLUMNS)
    epochs = sorted({int(r["epoch"]) for r in rows})
    curves: dict[str, np.ndarray] = {"epoch": np.array(epochs)}
    for col in METRIC_COLUMNS[2:]:
        curves[col] = np.array(
            [np.mean([float(r[col]) for r in rows if int(r["epoch"]) == e]) for e in epochs]
        )
    if valid_log is not None and Path(valid_log).exists():
        vrows = {int(r["epoch"]): r for r in _read_csv(valid_log, VALID_COLUMNS)}
        for col in VALID_COLUMNS[1:]:
            curves[f"valid_{col}"] = np.array([float(vrows[e][col]) if e in vrows else math.nan for e in epochs])
    curves["by_chance_nll"] = np.full(len(epochs), BY_CHANCE_NLL)
    curves["by_chance_entropy"] = np.full(len(epochs), BY_CHANCE_ENTROPY)
    return curves
