import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgsgan.dataflow import DataError, make_windows
from pgsgan.evalkit import (
    ClassDistribution,
    UniformPolicyModel,
    empirical_distribution,
    evaluate_generator,
    format_value,
    kld,
    learning_curves,
    mse,
)
from pgsgan.gan import Generator, NetConfig, Policy, PolicyModel, entropy
from pgsgan.gan.policy import joint_distribution
from pgsgan.orderdomain import N_CLASSES, orders_of_indices
from pgsgan.synth import SynthConfig, synth_market


def random_dist(rng, support=None):
    p = rng.dirichlet(np.full(N_CLASSES, 0.3))
    if support is not None:
        p[~support] = 0
        p /= p.sum()
    return p


def kld_loop(p, q):
    total = 0.0
    for a, b in zip(p.tolist(), q.tolist()):
        if a == 0:
            continue
        if b == 0:
            return math.inf
        total += a * math.log2(a / b)
    return total


def mse_loop(p, q):
    return sum((a - b) ** 2 for a, b in zip(p.tolist(), q.tolist())) / len(p)


@pytest.fixture(scope="module")
def windows():
    return make_windows(synth_market(SynthConfig(n_orders=300, seed=5))[0])


# -- distributions -------------------------------------------------------------------------
def test_empirical_one_hot():
    d = empirical_distribution([[1, 0, 0, 3, 4]] * 5)
    assert d.n_samples == 5 and d.probs.max() == 1.0 and d.probs.sum() == 1.0


def test_empirical_all_classes_uniform():
    d = empirical_distribution(orders_of_indices(np.arange(N_CLASSES)))
    assert np.allclose(d.probs, 1 / N_CLASSES)


def test_empirical_counting_fixture():
    orders = [[0, 0, 0, 0, 0]] * 3 + [[1, 1, 0, 2, 5]] * 5 + [[0, 1, 1, 0, 9]] * 2
    d = empirical_distribution(orders)
    assert d.probs[0] == 0.3 and d.probs[6400 + 3200 + 80 + 5] == 0.5 and d.probs[3200 + 1600 + 9] == 0.2


def test_empirical_empty_marker():
    d = empirical_distribution(np.zeros((0, 5), dtype=int))
    assert d.is_empty and d.n_samples == 0 and not d.probs.any()
    assert not ClassDistribution(np.full(N_CLASSES, 1 / N_CLASSES), 1).is_empty


# -- kld / mse -------------------------------------------------------------------------------
def test_kld_identity_and_two_class():
    p = np.array([0.5, 0.5])
    assert kld(p, p) == 0
    assert kld(p, [0.25, 0.75]) == pytest.approx(0.5 * math.log2(2) + 0.5 * math.log2(0.5 / 0.75), abs=1e-12)
    assert kld(p, [0.25, 0.75]) == pytest.approx(0.20752, abs=1e-5)


def test_kld_infinite_on_missing_support():
    p = np.zeros(N_CLASSES)
    p[7] = 1
    q = np.full(N_CLASSES, 1 / (N_CLASSES - 1))
    q[7] = 0
    assert kld(p, q) == math.inf
    assert format_value(kld(p, q)) == "inf"


def test_mse_examples():
    p, q = np.zeros(N_CLASSES), np.zeros(N_CLASSES)
    p[0], q[1] = 1, 1
    assert mse(p, p) == 0
    assert mse(p, q) == pytest.approx(2 / 12800, abs=1e-18)
    assert 2 / 12800 == pytest.approx(1.5625e-4)


def test_metrics_match_brute_force_100_pairs():
    rng = np.random.default_rng(0)
    for i in range(100):
        p = random_dist(rng, rng.random(N_CLASSES) < 0.7 if i % 2 else None)
        q = random_dist(rng)
        assert abs(kld(p, q) - kld_loop(p, q)) < 1e-9
        assert abs(mse(p, q) - mse_loop(p, q)) < 1e-9


def test_kld_infinity_exactly_on_support_violation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = random_dist(rng, rng.random(N_CLASSES) < 0.5)
        q_support = rng.random(N_CLASSES) < 0.9
        q = random_dist(rng, q_support)
        violated = bool(np.any((p > 0) & (q == 0)))
        assert math.isinf(kld(p, q)) == violated


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.integers(2, 50))
def test_gibbs_and_symmetry(seed, k):
    r = np.random.default_rng(seed)
    p, q = r.dirichlet(np.ones(k)), r.dirichlet(np.ones(k))
    assert kld(p, p) == 0 and kld(p, q) >= 0
    assert mse(p, q) == mse(q, p)


def test_entropy_agrees_with_gan_module():
    rng = np.random.default_rng(2)
    p = Policy.from_logits(rng.normal(size=(1, 83)))
    joint = joint_distribution(p)
    brute = float(-(joint * np.log2(joint)).sum())
    assert abs(entropy(p)[0] - brute) < 1e-9


# -- evaluate_generator --------------------------------------------------------------------------
class CopyModel:
    """Deterministic perfect generator: puts all mass on the real next order."""

    seed_dim = 4

    def __init__(self, windows):
        self.lookup = {w.tobytes(): t for w, t in zip(windows.history, windows.target)}

    def policy(self, history, quotes, z, repeats=1):
        targets = np.array([self.lookup[h.tobytes()] for h in history])
        return Policy.one_hot(np.repeat(targets, repeats, axis=0))


def test_perfect_generator(windows):
    r = evaluate_generator(CopyModel(windows), windows, n_seeds=5)
    assert r.nll_mean == pytest.approx(0, abs=1e-12) and r.nll_std_mean == pytest.approx(0, abs=1e-12)
    assert r.kld == 0 and r.mse == 0


def test_uniform_generator(windows):
    r = evaluate_generator(UniformPolicyModel(), windows, n_seeds=20)
    assert abs(r.entropy_mean - 13.6438) < 1e-3 and abs(r.nll_mean - 9.4572) < 1e-3
    assert r.n_fake == 20 * len(windows)


def test_evaluate_deterministic(windows):
    net = Generator(NetConfig().reduced(), np.random.default_rng(0)).eval()
    a = evaluate_generator(PolicyModel(net), windows, n_seeds=7, seed=3, chunk=16)
    b = evaluate_generator(PolicyModel(net), windows, n_seeds=7, seed=3, chunk=16)
    assert a.as_items() == b.as_items()
    c = evaluate_generator(PolicyModel(net), windows, n_seeds=7, seed=4)
    assert c.kld != a.kld or c.mse != a.mse


def test_evaluate_rejects_empty(windows):
    with pytest.raises(DataError):
        evaluate_generator(UniformPolicyModel(), windows.take(np.arange(0)))


def test_report_files(tmp_path, windows):
    r = evaluate_generator(UniformPolicyModel(), windows, n_seeds=3)
    paths = r.write(tmp_path)
    text = paths[0].read_text()
    for key in ("kld=", "mse=", "nll_mean=", "nll_std_mean=", "entropy_mean=", "units="):
        assert key in text
    names = sorted(p.name for p in paths[1:])
    assert names == sorted(f"report_hist_{m}.csv" for m in ("side", "action", "is_mo", "price", "volume"))
    price = (tmp_path / "report_hist_price.csv").read_text().splitlines()
    assert price[0] == "class,count,real_prob,fake_prob" and len(price) == 41


def test_untrained_model_close_to_uniform_reference():
    w = make_windows(synth_market(SynthConfig(n_orders=2000, seed=9))[0])
    net = Generator(NetConfig().reduced(), np.random.default_rng(0)).eval()
    ref = evaluate_generator(UniformPolicyModel(), w, n_seeds=100)
    fresh = evaluate_generator(PolicyModel(net), w, n_seeds=100)
    assert abs(fresh.kld - ref.kld) / ref.kld < 0.10


# -- learning curves ---------------------------------------------------------------------------
def write_log(path, rows, header="epoch,step,loss_c,loss_g,nll_real_mean,entropy_mean"):
    path.write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_learning_curves_per_epoch(tmp_path):
    rows = [(e, e * 3 + s, 0.1, 0.2, 9.4572, 13.6438) for e in range(1, 11) for s in range(3)]
    curves = learning_curves(write_log(tmp_path / "m.csv", rows))
    assert len(curves["epoch"]) == 10 and len(curves["entropy_mean"]) == 10
    assert np.allclose(curves["entropy_mean"], curves["by_chance_entropy"], atol=1e-3)
    assert np.all(curves["by_chance_nll"] == curves["by_chance_nll"][0])


def test_learning_curves_validation_columns(tmp_path):
    m = write_log(tmp_path / "m.csv", [(1, 1, 0, 0, 1, 1), (2, 2, 0, 0, 1, 1)])
    v = write_log(tmp_path / "v.csv", [(1, "inf", 0.1, 5, 6), (2, 2.5, 0.1, 5, 6)], "epoch,kld,mse,nll_mean,entropy_mean")
    curves = learning_curves(m, v)
    assert math.isinf(curves["valid_kld"][0]) and curves["valid_kld"][1] == 2.5


def test_learning_curves_missing_column(tmp_path):
    with pytest.raises(DataError, match="missing"):
        learning_curves(write_log(tmp_path / "m.csv", [(1, 1)], "epoch,step"))


def test_learning_curves_bad_line(tmp_path):
    with pytest.raises(DataError, match="line 3"):
        learning_curves(write_log(tmp_path / "m.csv", [(1, 1, 0, 0, 1, 1), (1, 2, "x", 0, 1, 1)]))
