"""Linear evaluation: multinomial logistic regression on frozen features."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .kernel import matmul, ordered_sum


@dataclass
class ProbeConfig:
    lr: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 200
    tol: float = 1e-6
    standardize: bool = True
    train_augment: bool = False  # one random crop+flip draw per training image
    seed: int = 0  # weights start at zero; kept for interface stability


@dataclass
class LinearProbe:
    weight: np.ndarray  # (dim, classes)
    bias: np.ndarray    # (classes,)
    mean: np.ndarray
    scale: np.ndarray
    epochs_run: int = 0
    loss_curve: List[float] = field(default_factory=list)

    def logits(self, features) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return matmul(x, self.weight) + self.bias


@dataclass
class ProbeResult:
    top1: float
    per_class_accuracy: List[float]
    train_loss_curve: List[float] = field(default_factory=list)
    epochs_run: int = 0

    def to_json(self) -> str:
        return json.dumps({"top1": self.top1, "per_class": self.per_class_accuracy,
                           "epochs_run": self.epochs_run})


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy and its gradient w.r.t. the logits."""
    m = logits.shape[0]
    shift = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    z = np.cumsum(e, axis=1)[:, -1:]
    logp = shift - np.log(z)
    loss = -ordered_sum(logp[np.arange(m), labels]) / m
    grad = e / z
    grad[np.arange(m), labels] -= 1.0
    return loss, grad / m


def fit_linear_probe(features, labels, classes: int, config: ProbeConfig = None) -> LinearProbe:
    """Full-batch gradient descent with momentum until the loss change drops
    below ``config.tol`` or ``config.max_epochs`` is reached."""
    config = config or ProbeConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if classes < 2:
        raise ValueError("a probe needs at least two classes")
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"features must be a non-empty matrix, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError("need exactly one label per feature row")
    if y.min() < 0 or y.max() >= classes:
        raise ValueError("label out of range")

    if config.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xs = (x - mean) / scale

    probe = LinearProbe(np.zeros((x.shape[1], classes)), np.zeros(classes), mean, scale)
    vel_w = np.zeros_like(probe.weight)
    vel_b = np.zeros_like(probe.bias)
    prev = None
    for epoch in range(config.max_epochs):
        loss, g = softmax_cross_entropy(matmul(xs, probe.weight) + probe.bias, y)
        probe.loss_curve.append(float(loss))
        probe.epochs_run = epoch + 1
        if prev is not None and abs(prev - loss) < config.tol:
            break
        prev = loss
        vel_w = config.momentum * vel_w + matmul(xs.T, g)
        vel_b = config.momentum * vel_b + np.cumsum(g, axis=0)[-1]
        probe.weight = probe.weight - config.lr * vel_w
        probe.bias = probe.bias - config.lr * vel_b
    return probe


def top1(probe: LinearProbe, features, labels) -> ProbeResult:
    """Top-1 accuracy; ties go to the lowest class index."""
    y = np.asarray(labels, dtype=np.int64)
    pred = np.argmax(probe.logits(features), axis=1)
    correct = pred == y
    k = probe.weight.shape[1]
    per_class = []
    for c in range(k):
        sel = y == c
        per_class.append(float(correct[sel].mean()) if sel.any() else 0.0)
    return ProbeResult(
        top1=float(correct.mean()) if y.size else 0.0,
        per_class_accuracy=per_class,
        train_loss_curve=list(probe.loss_curve),
        epochs_run=probe.epochs_run,
    )
