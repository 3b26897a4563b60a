"""Primary acceptance criteria, one PASS/FAIL line each (see the terminal summary).

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline.
"""
import math
import time

import numpy as np
from pgsgan.cli import OUTPUT_ROOT_ENV, main
from pgsgan.dataflow import make_windows, temporal_split
from pgsgan.evalkit import UniformPolicyModel, evaluate_generator, kld, mse
from pgsgan.gan import (
    Critic,
    Generator,
    NetConfig,
    Policy,
    TrainConfig,
    TrainState,
    analytic_gradient,
    entropy,
    fit,
    joint_distribution,
    nll,
    policy_gradient_loss,
    reinforce_bandit_check,
    reinforce_gradient,
    round_to_discrete,
    sample_orders,
)
from pgsgan.numcore import (
    AvgPool1d,
    BatchNorm,
    Conv1d,
    LayerNorm,
    LeakyReLU,
    Linear,
    Tensor,
    log_sigmoid,
    log_softmax,
    precision,
    sigmoid,
    spectral_normalize,
    tanh,
)
from pgsgan.numcore.gradcheck import check_gradients
from pgsgan.orderdomain import N_CLASSES, orders_of_indices, valid_mask
from pgsgan.synth import SynthConfig, synth_market

BY_CHANCE_ENTROPY = 13.6438


def test_by_chance_constants(acceptance):
    p = Policy.uniform(4)
    orders = orders_of_indices(np.array([0, 17, 6400, 12799 - 1600]))
    n, h = nll(p, orders), entropy(p)
    ok = bool(np.all(np.abs(n - 9.4572) < 1e-3) and np.all(np.abs(h - BY_CHANCE_ENTROPY) < 1e-3))
    assert acceptance("by-chance constants", ok, f"nll={n[0]:.6f} (9.4572) entropy={h[0]:.6f} (13.6438) tol 1e-3")


def _layer_cases(rng):
    return {
        "linear": (Linear(5, 4, rng), (3, 5)),
        "conv1d zero": (Conv1d(3, 2, 3, rng, padding=1), (3, 3, 7)),
        "conv1d circular dilated": (Conv1d(2, 3, 3, rng, dilation=2, padding=2, mode="circular"), (3, 2, 8)),
        "conv1d strided": (Conv1d(2, 2, 3, rng, stride=2), (2, 2, 9)),
        "avg pool": (AvgPool1d(2, 2), (2, 3, 6)),
        "batch norm": (BatchNorm(3), (4, 3, 5)),
        "layer norm": (LayerNorm(3), (4, 3, 5)),
        "leaky relu": (LeakyReLU(0.2), (4, 6)),
    }


def test_gradient_correctness(acceptance):
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    worst_layer, worst_name = 0.0, ""
    with precision(np.float64):
        for name, (layer, shape) in _layer_cases(rng).items():
            layer.set_power_iters(0)
            x = Tensor(rng.normal(size=shape), requires_grad=True)
            probe = rng.normal(size=layer(x).shape)
            params = [p for _, p in layer.named_parameters()] + [x]
            err = check_gradients(lambda: (layer(x) * probe).sum(), params)
            if err >= worst_layer:
                worst_layer, worst_name = err, name
        # elementwise ops, softmax and spectral normalisation
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        probe = rng.normal(size=(3, 6))
        for name, fn in {
            "log_softmax": lambda: log_softmax(x, axis=1),
            "sigmoid": lambda: sigmoid(x),
            "log_sigmoid": lambda: log_sigmoid(x),
            "tanh": lambda: tanh(x),
        }.items():
            err = check_gradients(lambda: (fn() * probe).sum(), [x])
            if err >= worst_layer:
                worst_layer, worst_name = err, name
        w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        u, v = rng.normal(size=4), rng.normal(size=5)
        u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
        probe = rng.normal(size=(4, 5))
        err = check_gradients(lambda: (spectral_normalize(w, u, v, update=False) * probe).sum(), [w])
        if err >= worst_layer:
            worst_layer, worst_name = err, "spectral norm"

        cfg = NetConfig(enc_channels=3, mix_channels=2, mix_length=4, gen_hidden=5, critic_hidden=5, seed_dim=4)
        h, q = rng.normal(size=(4, 20, 7)) * 0.5, rng.normal(size=(4, 2)) * 0.5
        worst_graph = 0.0
        for net, extra in ((Generator(cfg, rng), rng.normal(size=(4, 4))), (Critic(cfg, rng), rng.normal(size=(4, 7)))):
            net.set_power_iters(0)
            probe = rng.normal(size=net(h, q, extra).shape)
            params = [p for _, p in net.named_parameters()]
            err = check_gradients(lambda: (net(h, q, extra) * probe).sum(), params, floor=1e-5, max_entries=8, rng=rng)
            worst_graph = max(worst_graph, err)
    elapsed = time.monotonic() - t0
    ok = worst_layer < 1e-4 and worst_graph < 1e-3 and elapsed < 120
    detail = f"layers max rel err {worst_layer:.2e} ({worst_name}, tol 1e-4); full graphs {worst_graph:.2e} (tol 1e-3); {elapsed:.1f}s"
    assert acceptance("gradient correctness", ok, detail)


def test_spectral_normalization(acceptance):
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(100):
        shape = (int(rng.integers(2, 33)), int(rng.integers(2, 33)))
        w = rng.normal(size=shape) * rng.uniform(0.1, 10)
        u, v = rng.normal(size=shape[0]), rng.normal(size=shape[1])
        out = spectral_normalize(Tensor(w), u / np.linalg.norm(u), v / np.linalg.norm(v), n_iter=1000)
        worst = max(worst, abs(np.linalg.svd(out.data, compute_uv=False)[0] - 1))
    assert acceptance("spectral normalization", worst < 1e-3, f"max |sigma_max - 1| = {worst:.2e} over 100 matrices, 1000 power iterations (tol 1e-3)")


def test_reinforce_oracle(acceptance):
    rng = np.random.default_rng(2)
    theta = np.array([0.4, -0.3, 0.1])
    rewards = np.array([1.0, 0.2, -0.7])
    pi = np.exp(theta) / np.exp(theta).sum()
    batch, n_batches = 100, 1000  # 10^5 samples
    est = sum(reinforce_gradient(theta, rewards, rng.choice(3, size=batch, p=pi)) for _ in range(n_batches)) / n_batches
    exact = analytic_gradient(theta, rewards)
    rel = float(np.linalg.norm(est - exact) / np.linalg.norm(exact))
    final = reinforce_bandit_check(rewards, steps=10_000, lr=0.1, seed=3)
    ok = rel < 0.02 and final[int(np.argmax(rewards))] > 0.99
    assert acceptance("REINFORCE oracle", ok, f"rel err {rel:.4f} (tol 0.02); argmax mass {final.max():.4f} (> 0.99)")


def test_metric_oracles(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    inf_ok = True
    for i in range(100):
        p = rng.dirichlet(np.full(N_CLASSES, 0.5))
        q = rng.dirichlet(np.full(N_CLASSES, 0.5))
        if i % 4 == 1:
            p[rng.random(N_CLASSES) < 0.5] = 0
            p /= p.sum()
        violate = i % 4 == 3
        if violate:
            q[int(rng.choice(np.flatnonzero(p > 0)))] = 0
            q /= q.sum()
        brute_k = 0.0
        for a, b in zip(p.tolist(), q.tolist()):
            if a > 0:
                brute_k = math.inf if b == 0 else brute_k + a * math.log2(a / b)
        brute_m = sum((a - b) ** 2 for a, b in zip(p.tolist(), q.tolist())) / N_CLASSES
        k = kld(p, q)
        inf_ok &= math.isinf(k) == violate == math.isinf(brute_k)
        if not violate:
            worst = max(worst, abs(k - brute_k))
        worst = max(worst, abs(mse(p, q) - brute_m))
        pol = Policy.from_logits(rng.normal(scale=2, size=(1, 83)))
        joint = joint_distribution(pol)
        brute_h = -sum(x * math.log2(x) for x in joint.tolist() if x > 0)
        worst = max(worst, abs(float(entropy(pol)[0]) - brute_h))
        ks = rng.integers(0, N_CLASSES, 8)
        rows = Policy.from_logits(np.repeat(pol.logits(), 8, axis=0))
        worst = max(worst, float(np.max(np.abs(nll(rows, orders_of_indices(ks)) + np.log(joint[ks])))))
    ok = worst < 1e-9 and inf_ok
    assert acceptance("metric oracles", ok, f"max abs err {worst:.2e} (tol 1e-9); infinity exactly on violations: {inf_ok}")


# -- desk-scale training -----------------------------------------------------------------------
DESK = dict(n_orders=50_000, batch_size=256, max_steps=2_000, budget_s=30 * 60)
DESK_TRAIN = dict(lr=1e-4, critic_lr=0.0, seed=0)
DESK_VALID_SEEDS = 100
DESK_VALID_WINDOWS = 1000


def test_desk_scale_training(acceptance, tmp_path):
    t0 = time.monotonic()
    stream, _ = synth_market(SynthConfig(n_orders=DESK["n_orders"], seed=0))
    train_s, valid_s, _ = temporal_split(stream)
    train, valid = make_windows(train_s), make_windows(valid_s)
    valid = valid.take(np.arange(min(len(valid), DESK_VALID_WINDOWS)))
    uniform = evaluate_generator(UniformPolicyModel(), valid, DESK_VALID_SEEDS, seed=0)
    cfg = TrainConfig(
        batch_size=DESK["batch_size"],
        max_steps=DESK["max_steps"],
        valid_seeds=DESK_VALID_SEEDS,
        valid_max_windows=DESK_VALID_WINDOWS,
        net=NetConfig().reduced(),
        **DESK_TRAIN,
    )
    state = fit(TrainState(cfg), train, valid, tmp_path, time_budget=DESK["budget_s"])
    elapsed = time.monotonic() - t0
    rows = np.genfromtxt(tmp_path / "valid.csv", delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    target_kld = 0.5 * uniform.kld
    target_h = BY_CHANCE_ENTROPY - 2.0
    hits = [r for r in rows if r["kld"] <= target_kld and r["entropy_mean"] <= target_h]
    best = min(rows, key=lambda r: r["kld"])
    ok = bool(hits) and state.gen_steps <= DESK["max_steps"] and elapsed <= DESK["budget_s"]
    first = f"first at epoch {int(hits[0]['epoch'])}" if hits else "never"
    detail = (
        f"uniform kld {uniform.kld:.3f} bits; best valid kld {best['kld']:.3f} (epoch {int(best['epoch'])}, "
        f"entropy {best['entropy_mean']:.2f}); targets kld <= {target_kld:.3f} and entropy <= {target_h:.4f}, {first}; "
        f"final epoch kld {rows[-1]['kld']:.3f} entropy {rows[-1]['entropy_mean']:.2f}; "
        f"{state.gen_steps} generator steps, {elapsed / 60:.1f} min"
    )
    assert acceptance("desk-scale training", ok, detail)


def test_hinge_saturation(acceptance):
    rng = np.random.default_rng(5)
    cfg = NetConfig().reduced()
    gen, critic = Generator(cfg, rng), Critic(cfg, rng)
    stream, _ = synth_market(SynthConfig(n_orders=300, seed=1))
    w = make_windows(stream).take(np.arange(64))
    z = rng.normal(size=(64, cfg.seed_dim))
    c_real = critic(w.history, w.quotes, np.concatenate([w.target[:, :3], w.target[:, 3:] / 39, w.quotes], 1)).data
    norms = {}
    for variant in ("plain", "hinge"):
        for p in gen.parameters():
            p.grad = None
        logits = gen(w.history, w.quotes, z)
        _, sampled = sample_orders(Policy.from_logits(logits), np.random.default_rng(6))
        c_fake = np.zeros(64)  # saturated critic: every fake scores 0
        policy_gradient_loss(logits, sampled, c_fake, variant, c_real.astype(float)).backward()
        norms[variant] = math.sqrt(sum(float((p.grad**2).sum()) for p in gen.parameters() if p.grad is not None))
    ok = norms["plain"] == 0.0 and norms["hinge"] > 0.0
    assert acceptance("hinge-variant behaviour", ok, f"|grad| plain={norms['plain']:.3e} hinge={norms['hinge']:.3e}")


def test_discreteness(acceptance):
    rng = np.random.default_rng(7)
    bad = 0
    total = 0
    for _ in range(20):
        logits = rng.normal(scale=rng.uniform(0.1, 20), size=(50_000, 83))
        emitted, _ = sample_orders(Policy.from_logits(logits), rng)
        bad += int((~valid_mask(emitted)).sum())
        total += len(emitted)
    hi = np.array([1.5, 1.5, 1.5, 45, 45])
    rounded = round_to_discrete(rng.uniform(-0.5, hi, size=(100_000, 5)))
    bad_r = int((~valid_mask(rounded)).sum())
    ok = bad == 0 and bad_r == 0 and total == 1_000_000
    assert acceptance("discreteness guarantee", ok, f"{bad} violations in {total} sampled, {bad_r} in {len(rounded)} rounded")


def test_determinism(acceptance, tmp_path, monkeypatch):
    def pipeline(root):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(root))
        assert main(["synth", "--n_orders=800", "--seed=11", "--out_dir=data"]) == 0
        data = root / "data" / "orders.csv"
        train = ["train", f"--data={data}", "--out_dir=run", "--batch_size=32", "--lr=1e-3", "--max_epochs=3",
                 "--seed=11", "--valid_seeds=5", "--net.enc_channels=8", "--net.gen_hidden=32", "--net.critic_hidden=32"]
        assert main(train) == 0
        ckpt = root / "run" / "checkpoints" / "epoch_00003.pgsg"
        assert main(["evaluate", f"--checkpoint={ckpt}", f"--data={data}", "--n_seeds=20", "--seed=11", "--out_dir=eval"]) == 0
        files = ["data/orders.csv", "data/ground_truth.csv", "run/metrics.csv", "run/valid.csv", "eval/report.txt"]
        files += [f"eval/report_hist_{m}.csv" for m in ("side", "action", "is_mo", "price", "volume")]
        return {f: (root / f).read_bytes() for f in files}

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    same = [f for f in a if a[f] == b[f]]
    ok = len(same) == len(a)
    assert acceptance("determinism", ok, f"{len(same)}/{len(a)} output files byte-identical across two runs")
