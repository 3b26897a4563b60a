"""Command-line entry point: ``pgsgan {synth,train,generate,evaluate,report}``.

Each command reads an optional flat ``key=value`` file (``--config FILE``)
and then ``--key=value`` overrides. Relative ``out_dir`` values resolve
against ``$PGSGAN_OUTPUT_ROOT`` (default: the working directory). Every key is
validated before anything is written.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dataflow import DataError, derive_rng, load_orders, make_windows, read_kv, save_orders, temporal_split, write_kv
from .evalkit import evaluate_generator, learning_curves
from .gan.nets import NetConfig
from .gan.policy import sample_orders
from .gan.baseline import round_to_discrete
from .gan.trainer import TrainConfig, TrainingAborted, TrainState, fit
from .numcore.store import CheckpointError, load_arrays
from .orderdomain import N_CLASSES, orders_of_indices
from .synth import SynthConfig, SynthMarket

OUTPUT_ROOT_ENV = "PGSGAN_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("pgsgan")


class UsageError(ValueError):
    pass


# -- config handling ---------------------------------------------------------------
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "net"] + [f"net.{f.name}" for f in fields(NetConfig)]
_SYNTH_KEYS = [f.name for f in fields(SynthConfig)]

COMMAND_KEYS: dict[str, dict[str, str | None]] = {
    "synth": {"out_dir": "synth", **{k: None for k in _SYNTH_KEYS}},
    "train": {"data": None, "out_dir": "train", "resume": "", **{k: None for k in _TRAIN_KEYS}},
    "generate": {"checkpoint": None, "data": None, "out_dir": "generate", "n_seeds": "100", "seed": "0"},
    "evaluate": {
        "checkpoint": None,
        "data": None,
        "out_dir": "evaluate",
        "split": "test",
        "n_seeds": "100",
        "seed": "0",
        "max_windows": "0",
    },
    "report": {"metrics": None, "valid": "", "out_dir": "report"},
}
REQUIRED = {"train": ("data",), "generate": ("checkpoint", "data"), "evaluate": ("checkpoint", "data"), "report": ("metrics",)}


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if not item.startswith("--") or "=" not in item:
            raise UsageError(f"expected --key=value, got {item!r}")
        k, v = item[2:].split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(command: str, config_file: str | None, overrides: dict[str, str]) -> dict[str, str]:
    allowed = COMMAND_KEYS[command]
    items: dict[str, str] = {}
    if config_file:
        try:
            items.update(read_kv(config_file))
        except OSError as exc:
            raise UsageError(f"cannot read config {config_file}: {exc.strerror}") from None
    items.update(overrides)
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise UsageError(f"{command}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(allowed)}")
    for k in REQUIRED.get(command, ()):
        if not items.get(k):
            raise UsageError(f"{command}: missing required key {k!r}")
    return {**{k: v for k, v in allowed.items() if v is not None}, **items}


def output_dir(value: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / p
    return p


def _int(cfg: dict, key: str, minimum: int = 0) -> int:
    try:
        v = int(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {cfg[key]!r}") from None
    if v < minimum:
        raise UsageError(f"{key} must be >= {minimum}")
    return v


def _existing(cfg: dict, key: str) -> Path:
    p = Path(cfg[key])
    if not p.exists():
        raise UsageError(f"{key}: {p} does not exist")
    return p


def _train_config(cfg: dict) -> TrainConfig:
    items = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS}
    try:
        return TrainConfig.from_flat(items)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"train config: {exc}") from None


def _load_state(path: Path) -> TrainState:
    state = TrainState.load(path)
    state.generator.eval()
    state.critic.eval()
    return state


# -- commands ------------------------------------------------------------------------
def cmd_synth(cfg: dict) -> int:
    try:
        sc = SynthConfig.from_dict({k: v for k, v in cfg.items() if k in _SYNTH_KEYS})
    except DataError as exc:
        raise UsageError(str(exc)) from None
    out = output_dir(cfg["out_dir"])
    market = SynthMarket(sc)
    stream = market.generate()
    out.mkdir(parents=True, exist_ok=True)
    save_orders(stream, out / "orders.csv")
    sc.save(out / "synth.conf")
    truth = market.ground_truth
    cls = orders_of_indices(np.arange(N_CLASSES))
    with open(out / "ground_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("class", "side", "action", "is_mo", "price_class", "volume_class", "probability"))
        for k in range(N_CLASSES):
            w.writerow((k, *cls[k], repr(float(truth[k]))))
    log.info("wrote %d orders to %s", len(stream), out)
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    tc = _train_config(cfg)
    data = _existing(cfg, "data")
    resume = _existing(cfg, "resume") if cfg.get("resume") else None
    out = output_dir(cfg["out_dir"])
    stream = load_orders(data)
    train_s, valid_s, _ = temporal_split(stream)
    train, valid = make_windows(train_s), make_windows(valid_s)
    state = TrainState(tc)
    if resume is not None:
        state.load_arrays(load_arrays(resume))
    out.mkdir(parents=True, exist_ok=True)
    write_kv(out / "train.conf", tc.flat())
    try:
        fit(state, train, valid, out)
    except TrainingAborted as exc:
        log.error("%s; checkpoint written to %s", exc, exc.checkpoint)
        return EXIT_NUMERIC
    log.info("finished: epoch %d, %d generator steps", state.epoch, state.gen_steps)
    return EXIT_OK


def cmd_generate(cfg: dict) -> int:
    n_seeds = _int(cfg, "n_seeds", 1)
    seed = _int(cfg, "seed")
    ckpt, data = _existing(cfg, "checkpoint"), _existing(cfg, "data")
    out = output_dir(cfg["out_dir"])
    state = _load_state(ckpt)
    windows = make_windows(load_orders(data))
    model = state.eval_model()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "generated.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("situation", "seed_index", "side", "action", "is_mo", "price_class", "volume_class"))
        for i in range(len(windows)):
            rng = derive_rng(seed, "generate", i)
            z = rng.standard_normal((n_seeds, model.seed_dim))
            h, q = windows.history[i : i + 1], windows.quotes[i : i + 1]
            if state.is_policy:
                orders = sample_orders(model.policy(h, q, z, repeats=n_seeds), rng)[0]
            else:
                orders = round_to_discrete(model.continuous(h, q, z, repeats=n_seeds))
            for j, o in enumerate(orders):
                w.writerow((i, j, *(int(x) for x in o)))
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    n_seeds = _int(cfg, "n_seeds", 1)
    seed = _int(cfg, "seed")
    max_windows = _int(cfg, "max_windows")
    if cfg["split"] not in ("test", "valid", "all"):
        raise UsageError("split must be test, valid or all")
    ckpt, data = _existing(cfg, "checkpoint"), _existing(cfg, "data")
    out = output_dir(cfg["out_dir"])
    state = _load_state(ckpt)
    stream = load_orders(data)
    if cfg["split"] != "all":
        _, valid_s, test_s = temporal_split(stream)
        stream = test_s if cfg["split"] == "test" else valid_s
    windows = make_windows(stream)
    if max_windows:
        windows = windows.take(np.arange(min(max_windows, len(windows))))
    report = evaluate_generator(state.eval_model(), windows, n_seeds, seed)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    metrics = _existing(cfg, "metrics")
    valid = _existing(cfg, "valid") if cfg.get("valid") else None
    out = output_dir(cfg["out_dir"])
    curves = learning_curves(metrics, valid)
    out.mkdir(parents=True, exist_ok=True)
    refs = ("by_chance_nll", "by_chance_entropy")
    for name, series in curves.items():
        if name == "epoch" or name in refs:
            continue
        with open(out / f"curve_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", name, *refs))
            for e, v, a, b in zip(curves["epoch"], series, curves[refs[0]], curves[refs[1]]):
                w.writerow((int(e), repr(float(v)), repr(float(a)), repr(float(b))))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgsgan", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.command, args.config, parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"pgsgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"pgsgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"pgsgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
