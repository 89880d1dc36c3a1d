"""Two-view pretraining loop, batch-size sweeps and report writing."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .chunked import chunked_sigclr_loss, plan_shards
from .config import RunConfig, dump_config
from .data import ImageRecord, eval_transform, read_cifar10_dir, synth_clusters, two_view_batch
from .losses import LossParams, build_masks, ntxent_loss, sigclr_loss
from .model import Model, ModelSpec, load_checkpoint, save_checkpoint
from .optim import DivergenceError, Lars, lr_at
from .probe import ProbeResult, fit_linear_probe, top1

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "learning_rate", "bias_value", "temperature_value"]
SHUFFLE_TAG = 2**31 - 1
PROBE_TAG = 2**31 - 2

# Linear-eval top-1 (%) for ResNet-18 after 1000 pretraining epochs, per batch
# size.  Shown in sweep reports for orientation only; desk runs are not
# comparable.
REFERENCE_TOP1 = {
    "sigclr": {
        "cifar10": {64: 91.26, 128: 91.77, 256: 92.11, 512: 92.59, 1024: 92.62},
        "cifar100": {64: 66.52, 128: 66.98, 256: 67.86, 512: 68.57, 1024: 68.58},
        "tiny-imagenet": {64: 47.53, 128: 48.94, 256: 49.62, 512: 50.56, 1024: 51.54},
    },
    "ntxent": {
        "cifar10": {64: 90.56, 128: 91.69, 256: 92.23, 512: 92.42, 1024: 92.26},
        "cifar100": {64: 62.85, 128: 65.49, 256: 66.67, 512: 67.26, 1024: 66.49},
        "tiny-imagenet": {64: 46.08, 128: 48.16, 256: 49.92, 512: 49.16, 1024: 49.94},
    },
}


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    learning_rate: float
    bias_value: float
    temperature_value: float
    wall_seconds: float = 0.0

    def csv_fields(self) -> List[str]:
        # wall time is kept out of the CSV so identical runs give identical files
        return [str(self.epoch)] + [repr(float(v)) for v in
                                    (self.train_loss, self.learning_rate, self.bias_value, self.temperature_value)]


@dataclass
class Dataset:
    train: List[ImageRecord]
    test: List[ImageRecord]
    classes: int


@dataclass
class PretrainResult:
    model: Model
    loss_state: Dict[str, np.ndarray]
    metrics: List[MetricsRow]
    first_epoch_digest: Optional[str] = None
    out_dir: Optional[Path] = None


def load_dataset(config: RunConfig) -> Dataset:
    if config.data == "synthetic":
        s = config.synthetic
        records = synth_clusters(s.classes, s.train_per_class + s.test_per_class, s.image_size,
                                 s.separation, s.seed, s.noise)
        per = s.train_per_class + s.test_per_class
        train, test = [], []
        for i, r in enumerate(records):
            (train if i % per < s.train_per_class else test).append(r)
        return Dataset(train, test, s.classes)
    path = config.data.partition(":")[2]
    return Dataset(read_cifar10_dir(path, train=True), read_cifar10_dir(path, train=False), 10)


def input_dim_for(config: RunConfig, dataset: Dataset) -> int:
    h, w, c = dataset.train[0].pixels.shape
    size = config.augment.output_size
    return h * w * c if size is None else size * size * c


def build_model(config: RunConfig, input_dim: int) -> Model:
    m = config.model
    spec = ModelSpec(input_dim, tuple(m.encoder_widths), tuple(m.projector_widths), m.width_factor)
    return Model.create(spec, config.seed, np.dtype(m.precision))


def init_loss_state(config: RunConfig, dtype) -> Dict[str, np.ndarray]:
    lp = config.loss_params
    state = {"loss.bias": np.array(lp.bias, dtype=dtype)}
    if lp.learnable_temperature:
        t = math.log(lp.temperature) if lp.temperature_param_space == "log" else lp.temperature
        state["loss.temperature"] = np.array(t, dtype=dtype)
    return state


def current_loss_params(config: RunConfig, state: Dict[str, np.ndarray]) -> LossParams:
    lp = config.loss_params
    t = lp.temperature
    if lp.learnable_temperature:
        raw = float(state["loss.temperature"])
        t = math.exp(raw) if lp.temperature_param_space == "log" else raw
    return dataclasses.replace(lp, temperature=t, bias=float(state["loss.bias"]))


def compute_loss(config: RunConfig, z: np.ndarray, params: LossParams, threads: int = 1):
    if config.loss == "ntxent":
        return ntxent_loss(z, config.ntxent_temperature)
    n = z.shape[0] // 2
    if config.devices > 1:
        return chunked_sigclr_loss(z, params, plan_shards(n, config.devices), threads=threads)
    return sigclr_loss(z, build_masks(n), params)


def epoch_order(seed: int, epoch: int, size: int) -> np.ndarray:
    return np.random.default_rng([seed, SHUFFLE_TAG, epoch]).permutation(size)


def pretrain(config: RunConfig, out_dir=None, dataset: Optional[Dataset] = None) -> PretrainResult:
    """Seeded SSL pretraining.  Row 0 of the metrics is the untrained model
    scored on epoch-0 views; rows 1..epochs are training epochs."""
    config.validate()
    dataset = dataset or load_dataset(config)
    train = dataset.train
    B = config.optim.batch_size
    steps = len(train) // B  # drop last
    if steps == 0 and config.epochs > 0:
        raise ValueError(f"batch size {B} exceeds the {len(train)} training records")
    dtype = np.dtype(config.model.precision)
    model = build_model(config, input_dim_for(config, dataset))
    loss_state = init_loss_state(config, dtype)
    total = max(config.epochs, 1)
    opt_cfg = dataclasses.replace(config.optim, total_epochs=total,
                                  warmup_epochs=min(config.optim.warmup_epochs, total))
    opt = Lars(opt_cfg)
    workers = config.workers

    def batches(epoch):
        order = epoch_order(config.seed, epoch, len(train))
        for b in range(steps):
            idx = order[b * B : (b + 1) * B]
            yield b, two_view_batch(train, idx, config.augment, config.seed, epoch, workers, dtype)

    def snapshot(epoch, loss, lr, wall):
        lp = current_loss_params(config, loss_state)
        return MetricsRow(epoch, float(loss), float(lr), float(loss_state["loss.bias"]), float(lp.temperature), wall)

    start = time.perf_counter()
    losses = [float(compute_loss(config, model.forward(x)[1], current_loss_params(config, loss_state), workers).value)
              for _, x in batches(0)]
    metrics = [snapshot(0, np.mean(losses) if losses else float("nan"), lr_at(opt_cfg, 0),
                        time.perf_counter() - start)]
    digest = None

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        hasher = hashlib.sha256() if epoch == 1 else None
        losses = []
        for b, x in batches(epoch):
            if hasher is not None:
                hasher.update(x.tobytes())
            lr = lr_at(opt_cfg, (epoch - 1) + b / steps)
            lp = current_loss_params(config, loss_state)
            _, z = model.forward(x)
            out = compute_loss(config, z, lp, workers)
            if not np.isfinite(out.value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b}: bias={lp.bias}, temperature={lp.temperature}"
                )
            grads = model.backward(np.asarray(out.grad_embeddings, dtype=dtype))
            opt.step(model.params, grads, lr)
            if config.loss == "sigclr":
                loss_grads = {}
                if config.learnable_bias:
                    loss_grads["loss.bias"] = np.array(out.grad_bias, dtype=dtype)
                if "loss.temperature" in loss_state:
                    loss_grads["loss.temperature"] = np.array(out.grad_temperature, dtype=dtype)
                opt.step(loss_state, loss_grads, lr)
            losses.append(float(out.value))
        if hasher is not None:
            digest = hasher.hexdigest()
        row = snapshot(epoch, np.mean(losses), lr_at(opt_cfg, epoch), time.perf_counter() - start)
        metrics.append(row)
        log.info("epoch %d loss %.5f lr %.4f bias %.3f", epoch, row.train_loss, row.learning_rate, row.bias_value)

    result = PretrainResult(model, loss_state, metrics, digest)
    if out_dir is not None:
        result.out_dir = write_run(out_dir, config, result)
    return result


def write_run(out_dir, config: RunConfig, result: PretrainResult) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in result.metrics:
        writer.writerow(row.csv_fields())
    (out / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8")
    save_checkpoint(out / "checkpoint.sgcl", {**result.model.params, **result.loss_state})
    (out / "config.cfg").write_text(dump_config(config), encoding="utf-8")
    last = result.metrics[-1]
    summary = {
        "loss": config.loss,
        "epochs": config.epochs,
        "initial_loss": result.metrics[0].train_loss,
        "final_loss": last.train_loss,
        "final_bias": last.bias_value,
        "final_temperature": last.temperature_value,
        "first_epoch_views_sha256": result.first_epoch_digest,
        "wall_seconds": [round(r.wall_seconds, 4) for r in result.metrics],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return out


def encoder_features(model: Model, records: Sequence[ImageRecord], config: RunConfig,
                     train_phase: bool = False) -> np.ndarray:
    size = config.augment.output_size
    rows = []
    for i, r in enumerate(records):
        rng = np.random.default_rng([config.seed, PROBE_TAG, i]) if train_phase else None
        rows.append(eval_transform(r, train_phase, size, rng))
    x = np.stack(rows).astype(model.params["encoder.0.weight"].dtype)
    return model.encode(x)


def linear_eval(model: Model, dataset: Dataset, config: RunConfig) -> ProbeResult:
    """Fit a probe on frozen encoder features (never projector outputs)."""
    train_h = encoder_features(model, dataset.train, config, config.probe.train_augment)
    test_h = encoder_features(model, dataset.test, config)
    probe = fit_linear_probe(train_h, [r.label for r in dataset.train], dataset.classes, config.probe)
    return top1(probe, test_h, [r.label for r in dataset.test])


def model_from_checkpoint(config: RunConfig, path, input_dim: int) -> Model:
    tensors = load_checkpoint(path)
    model = build_model(config, input_dim)
    for name in model.params:
        if name not in tensors:
            raise ValueError(f"checkpoint {path} lacks tensor {name!r}")
        model.params[name] = tensors[name].astype(model.params[name].dtype)
    return model


def sweep(config: RunConfig, batch_sizes: Sequence[int], out_dir=None) -> dict:
    """Pretrain + probe per batch size; failures are recorded, not raised."""
    rows = []
    dataset = load_dataset(config) if batch_sizes else None
    for bs in batch_sizes:
        row = {"batch_size": bs, "loss": config.loss}
        try:
            cfg = dataclasses.replace(config, optim=dataclasses.replace(config.optim, batch_size=bs))
            sub = None if out_dir is None else Path(out_dir) / f"bs_{bs}"
            result = pretrain(cfg, sub, dataset)
            probe = linear_eval(result.model, dataset, cfg)
            row.update(top1=probe.top1, per_class=probe.per_class_accuracy,
                       final_loss=result.metrics[-1].train_loss, error=None)
        except Exception as exc:  # noqa: BLE001 - a failed run must not stop the sweep
            log.warning("batch size %s failed: %s", bs, exc)
            row.update(top1=None, per_class=None, final_loss=None, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    table = {
        "rows": rows,
        "footer": {
            "reference_full_scale_top1_percent": REFERENCE_TOP1.get(config.loss, {}),
            "note": "ResNet-18, 1000 pretraining epochs; for orientation only, never asserted.",
        },
    }
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return table
