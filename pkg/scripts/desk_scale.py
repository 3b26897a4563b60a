"""Desk-scale experiment: synthetic market -> train -> evaluate -> learning curves.

    python3 scripts/desk_scale.py --out runs/desk --model pgsgan
    python3 scripts/desk_scale.py --out runs/desk --model all --max-steps 500

Every step goes through the CLI so the run directory is the same as a manual run.
The uniform policy reference is printed alongside each model's test report.
"""
import argparse
import os
import sys
from pathlib import Path

from pgsgan.cli import OUTPUT_ROOT_ENV, main as cli
from pgsgan.dataflow import load_orders, make_windows, temporal_split
from pgsgan.evalkit import UniformPolicyModel, evaluate_generator
from pgsgan.gan import MODELS

CONFIGS = Path(__file__).resolve().parent / "configs"


def run(cmd, *args):
    code = cli([cmd, *args])
    if code:
        sys.exit(f"{cmd} failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--model", default="pgsgan", choices=(*MODELS, "all"))
    ap.add_argument("--max-steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-seeds", type=int, default=100)
    args = ap.parse_args()

    root = Path(args.out).resolve()
    root.mkdir(parents=True, exist_ok=True)
    os.environ[OUTPUT_ROOT_ENV] = str(root)

    run("synth", f"--config={CONFIGS / 'synth_50k.conf'}", f"--seed={args.seed}", "--out_dir=data")
    data = root / "data" / "orders.csv"

    _, _, test = temporal_split(load_orders(data))
    uniform = evaluate_generator(UniformPolicyModel(), make_windows(test), args.n_seeds, seed=args.seed)
    print(f"uniform policy on test: kld={uniform.kld:.4f} entropy={uniform.entropy_mean:.4f}")

    for model in MODELS if args.model == "all" else (args.model,):
        run(
            "train",
            f"--config={CONFIGS / 'desk_train.conf'}",
            f"--data={data}",
            f"--model={model}",
            f"--max_steps={args.max_steps}",
            f"--seed={args.seed}",
            f"--out_dir={model}/train",
        )
        ckpts = sorted((root / model / "train" / "checkpoints").glob("epoch_*.pgsg"))
        run(
            "evaluate",
            f"--checkpoint={ckpts[-1]}",
            f"--data={data}",
            f"--n_seeds={args.n_seeds}",
            f"--seed={args.seed}",
            f"--out_dir={model}/eval",
        )
        run(
            "report",
            f"--metrics={root / model / 'train' / 'metrics.csv'}",
            f"--valid={root / model / 'train' / 'valid.csv'}",
            f"--out_dir={model}/curves",
        )
        print(f"== {model} ({ckpts[-1].name})")
        print((root / model / "eval" / "report.txt").read_text())


if __name__ == "__main__":
    main()
