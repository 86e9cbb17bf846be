#!/usr/bin/env python3
"""Calibration driver: run selected recipes/grids at chosen scales and print BLEU.

Used to pick desk-scale defaults (training budgets, shared-token fraction)
that make the qualitative orderings emerge robustly. Not part of the test
suite.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict

from pivotnmt.model import ModelConfig
from pivotnmt.recipes import GRIDS, Settings, Workbench, run_recipe
from pivotnmt.toyworld import ToyWorldSpec
from pivotnmt.training import TrainSchedule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--recipes", default="direct,plain,stepwise,stepwise+xenc")
    ap.add_argument("--grid", default=None)
    ap.add_argument("--seeds", default="1")
    ap.add_argument("--scale", type=float, default=1.0, help="corpus size multiplier")
    ap.add_argument("--pretrain-updates", type=int, default=600)
    ap.add_argument("--finetune-updates", type=int, default=300)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--shared", type=float, default=0.5)
    ap.add_argument("--json-out", default=None)
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    names = GRIDS[args.grid] if args.grid else args.recipes.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]

    settings = Settings(
        model=ModelConfig(model_dim=args.dim, ff_dim=args.dim * 2),
        pretrain=TrainSchedule(
            initial_lr=1e-3, checkpoint_interval=200,
            max_updates=args.pretrain_updates, max_tokens=1024,
        ),
        finetune=TrainSchedule(
            initial_lr=1e-3, checkpoint_interval=100,
            max_updates=args.finetune_updates, max_tokens=1024,
        ),
    )
    rows = []
    for seed in seeds:
        spec = ToyWorldSpec(
            seed=seed,
            shared_token_fraction=args.shared,
            n_src_piv=int(20000 * args.scale),
            n_piv_tgt=int(20000 * args.scale),
            n_src_tgt=max(50, int(500 * args.scale)),
            n_mono_piv=int(5000 * args.scale),
            n_val=max(50, int(400 * args.scale)),
            n_test=max(100, int(800 * args.scale)),
        )
        wb = Workbench(spec, settings, seed)
        for name in names:
            t0 = time.time()
            res = run_recipe(wb, name)
            rows.append(
                dict(seed=seed, recipe=name, test=round(res.test_bleu, 2),
                     val=round(res.val_bleu, 2), secs=round(time.time() - t0, 1))
            )
            print(f"seed={seed} {name:>26s}  test={res.test_bleu:6.2f}  "
                  f"val={res.val_bleu:6.2f}  ({rows[-1]['secs']}s)", flush=True)
    if args.json_out:
        with open(args.json_out, "w") as f:
            json.dump({"rows": rows, "settings": asdict(settings)}, f, indent=2, default=str)


if __name__ == "__main__":
    main()
