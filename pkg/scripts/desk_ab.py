"""SigCLR vs NT-Xent on the synthetic desk dataset, same seeds and views.

    python scripts/desk_ab.py --seeds 0 1 2 --epochs 30
"""
import argparse
import dataclasses

from sigclr.config import RunConfig
from sigclr.train import linear_eval, load_dataset, pretrain


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=64)
    args = ap.parse_args()

    print(f"{'loss':8} {'seed':>4} {'loss0':>8} {'lossT':>8} {'top1':>6}")
    for seed in args.seeds:
        base = RunConfig(seed=seed, epochs=args.epochs)
        base = dataclasses.replace(base, optim=dataclasses.replace(base.optim, batch_size=args.batch_size))
        ds = load_dataset(base)
        for loss in ("sigclr", "ntxent"):
            cfg = dataclasses.replace(base, loss=loss)
            res = pretrain(cfg, dataset=ds)
            probe = linear_eval(res.model, ds, cfg)
            print(f"{loss:8} {seed:>4} {res.metrics[0].train_loss:8.4f} "
                  f"{res.metrics[-1].train_loss:8.4f} {probe.top1:6.3f}")


if __name__ == "__main__":
    main()
