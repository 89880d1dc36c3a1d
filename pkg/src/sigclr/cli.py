"""Command line entry point: ``sigclr {pretrain,probe,sweep,chunk-bench,check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .chunked import chunk_exchange_count, chunked_sigclr_loss, plan_shards
from .checks import SUITES
from .config import ConfigError, load_config
from .losses import LossParams, build_masks, sigclr_loss
from .optim import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_DIVERGED = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=["sigclr", "ntxent"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--devices", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", help="'synthetic' or 'cifar10:PATH'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra config override, e.g. --set loss.temperature=2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigclr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("pretrain", help="self-supervised pretraining run"))

    probe = sub.add_parser("probe", help="linear evaluation of a checkpoint")
    _common(probe)
    probe.add_argument("--checkpoint", help="defaults to OUT/checkpoint.sgcl")
    probe.add_argument("--json-out", help="write the ProbeResult JSON here instead of stdout")

    sweep = sub.add_parser("sweep", help="pretrain + probe across batch sizes")
    _common(sweep)
    sweep.add_argument("--batch-sizes", default="64,128", help="comma separated; empty for none")

    bench = sub.add_parser("chunk-bench", help="chunked vs monolithic sigmoid loss")
    _common(bench)
    bench.add_argument("--rows", type=int, default=64, help="2n, total rows in the batch")
    bench.add_argument("--dim", type=int, default=128)
    bench.add_argument("--device-list", default=None, help="comma separated D values (default: divisors of 2n)")

    check = sub.add_parser("check", help="run an oracle suite")
    check.add_argument("kind", choices=sorted(SUITES))
    return parser


def _load(args):
    overrides = []
    for flag, key in (("seed", "seed"), ("loss", "loss"), ("batch_size", "optim.batch_size"),
                      ("devices", "devices"), ("epochs", "epochs"), ("data", "data"), ("out", "out")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append((key, str(v)))
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), value.strip()))
    config = load_config(args.config, overrides)
    from .data import worker_count
    config.workers = worker_count(config.workers)
    return config


def cmd_pretrain(args) -> int:
    from .train import pretrain
    config = _load(args)
    result = pretrain(config, config.out)
    print(json.dumps({"out": str(result.out_dir), "initial_loss": result.metrics[0].train_loss,
                      "final_loss": result.metrics[-1].train_loss}))
    return EXIT_OK


def cmd_probe(args) -> int:
    from .train import input_dim_for, linear_eval, load_dataset, model_from_checkpoint
    config = _load(args)
    dataset = load_dataset(config)
    ckpt = args.checkpoint or str(Path(config.out) / "checkpoint.sgcl")
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint {ckpt} not found")
    model = model_from_checkpoint(config, ckpt, input_dim_for(config, dataset))
    text = linear_eval(model, dataset, config).to_json()
    if args.json_out:
        Path(args.json_out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .train import sweep
    config = _load(args)
    sizes = [int(s) for s in args.batch_sizes.split(",") if s.strip()]
    table = sweep(config, sizes, config.out if sizes else None)
    print(json.dumps(table, indent=2))
    return EXIT_OK


def chunk_bench(rows: int, dim: int, devices, seed: int, params: LossParams, threads: int = 1) -> dict:
    if rows % 2:
        raise ConfigError("--rows must be even")
    n = rows // 2
    x = np.random.default_rng(seed).normal(size=(rows, dim))
    start = time.perf_counter()
    mono = sigclr_loss(x, build_masks(n), params)
    mono_time = time.perf_counter() - start
    report = {"rows": rows, "dim": dim, "monolithic": {"wall_seconds": mono_time, "peak_block_elems": rows * rows},
              "devices": []}
    for D in devices:
        plan = plan_shards(n, D)
        start = time.perf_counter()
        res = chunked_sigclr_loss(x, params, plan, threads=threads)
        wall = time.perf_counter() - start
        report["devices"].append({
            "devices": D,
            "chunk_size": plan.chunk_size,
            "wall_seconds": wall,
            "peak_block_elems": max(res.device_peaks),
            "exchange_count": chunk_exchange_count(plan),
            "max_value_deviation": abs(float(res.value - mono.value)),
            "max_grad_deviation": float(np.abs(res.grad_embeddings - mono.grad_embeddings).max()),
        })
    return report


def cmd_chunk_bench(args) -> int:
    config = _load(args)
    if args.device_list:
        devices = [int(s) for s in args.device_list.split(",") if s.strip()]
    else:
        devices = [d for d in range(1, args.rows + 1) if args.rows % d == 0 and d <= 16]
    report = chunk_bench(args.rows, args.dim, devices, config.seed, config.loss_params, config.workers)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_check(args) -> int:
    results = SUITES[args.kind]()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


COMMANDS = {"pretrain": cmd_pretrain, "probe": cmd_probe, "sweep": cmd_sweep,
            "chunk-bench": cmd_chunk_bench, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # shard/shape problems surfaced by user input are configuration errors
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
