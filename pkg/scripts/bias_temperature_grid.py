"""Desk-scale grid over temperature x {fixed t + learnable bias,
learnable t + learnable bias, fixed t without bias}.

    python scripts/bias_temperature_grid.py --epochs 30 --seed 0
"""
import argparse
import dataclasses
import json

from sigclr.config import RunConfig
from sigclr.train import linear_eval, load_dataset, pretrain

SETTINGS = {
    "fixed_t_learnable_bias": dict(learnable_bias=True, learnable_temperature=False, bias=-10.0),
    "learnable_t_learnable_bias": dict(learnable_bias=True, learnable_temperature=True, bias=-10.0),
    "fixed_t_no_bias": dict(learnable_bias=False, learnable_temperature=False, bias=0.0),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--temperatures", type=float, nargs="+", default=[1.0, 2.0, 5.0, 10.0])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the grid here")
    args = ap.parse_args()

    base = RunConfig(seed=args.seed, epochs=args.epochs)
    ds = load_dataset(base)
    grid = {}
    for name, s in SETTINGS.items():
        row = {}
        for t in args.temperatures:
            lp = dataclasses.replace(base.loss_params, temperature=t, bias=s["bias"],
                                     learnable_temperature=s["learnable_temperature"])
            cfg = dataclasses.replace(base, loss_params=lp, learnable_bias=s["learnable_bias"])
            try:
                res = pretrain(cfg, dataset=ds)
                row[t] = round(linear_eval(res.model, ds, cfg).top1 * 100, 2)
            except FloatingPointError as exc:
                row[t] = f"diverged: {exc}"
        grid[name] = row
        print(f"{name:28}", "  ".join(f"t={t:g}: {v}" for t, v in row.items()), flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(grid, fh, indent=2)


if __name__ == "__main__":
    main()
