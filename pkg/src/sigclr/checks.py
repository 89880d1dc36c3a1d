"""Oracle suites behind ``sigclr check``.

Each suite returns ``CheckResult`` rows; the CLI prints one line per row and
exits non-zero if any fails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .chunked import chunked_sigclr_loss, plan_shards
from .kernel import finite_diff_grad, max_rel_error
from .losses import LossParams, bias_grad_closed_form, build_masks, ntxent_loss, sigclr_loss
from .model import Model, ModelSpec

GRAD_TOL = 1e-6
MODEL_GRAD_TOL = 1e-5
CHUNK_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def _sigclr_value(params):
    def f(x):
        return sigclr_loss(x, build_masks(x.shape[0] // 2), params).value
    return f


def check_loss_values() -> List[CheckResult]:
    p = LossParams(temperature=1.0, bias=0.0)
    same = sigclr_loss(np.array([[1.0, 0.0], [1.0, 0.0]]), build_masks(1), p).value
    orth = sigclr_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), build_masks(1), p).value
    want_same = math.log1p(math.exp(-1.0))
    nt = ntxent_loss(np.array([[1.0, 2.0], [3.0, -1.0]]), 0.5).value
    return [
        CheckResult("sigclr identical rows", abs(same - want_same) <= 1e-12, f"{float(same)!r} vs {want_same!r}"),
        CheckResult("sigclr orthogonal rows", abs(orth - math.log(2)) <= 1e-12, f"{float(orth)!r} vs ln2"),
        CheckResult("ntxent single pair", nt == 0.0, f"{float(nt)!r}"),
    ]


def check_grad(seeds=(0, 1, 2), temperatures=(1.0, 2.0, 5.0, 10.0)) -> List[CheckResult]:
    out = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(8, 6))
        for t in temperatures:
            p = LossParams(temperature=t, bias=float(rng.uniform(-4, 0)), learnable_temperature=True)
            res = sigclr_loss(x, build_masks(4), p)
            emb = max_rel_error(res.grad_embeddings, finite_diff_grad(_sigclr_value(p), x))
            fb = finite_diff_grad(lambda b: sigclr_loss(x, build_masks(4), LossParams(
                temperature=t, bias=float(b[0, 0]))).value, np.array([[p.bias]]))[0, 0]
            logt = math.log(t)
            ft = finite_diff_grad(lambda v: sigclr_loss(x, build_masks(4), LossParams(
                temperature=math.exp(v[0, 0]), bias=p.bias)).value, np.array([[logt]]))[0, 0]
            bias_err = max_rel_error(res.grad_bias, fb)
            temp_err = max_rel_error(res.grad_temperature, ft)
            worst = max(emb, bias_err, temp_err)
            out.append(CheckResult(f"sigclr grad seed={seed} t={t:g}", worst < GRAD_TOL,
                                   f"emb={emb:.1e} bias={bias_err:.1e} temp={temp_err:.1e}"))
        nt = ntxent_loss(x, 0.5)
        err = max_rel_error(nt.grad_embeddings, finite_diff_grad(lambda z: ntxent_loss(z, 0.5).value, x))
        out.append(CheckResult(f"ntxent grad seed={seed}", err < GRAD_TOL, f"{err:.1e}"))
        out.append(model_grad_check(seed))
    return out


def model_grad_check(seed: int, t: float = 5.0) -> CheckResult:
    """End-to-end: loss -> projector -> encoder, every weight vs finite differences."""
    rng = np.random.default_rng(seed)
    spec = ModelSpec(input_dim=5, encoder_widths=(7,), projector_widths=(6, 4))
    model = Model.create(spec, seed, np.float64)
    for name in model.params:
        if name.endswith(".bias"):
            model.params[name] = rng.normal(scale=0.1, size=model.params[name].shape)
    images = rng.normal(size=(6, 5))
    params = LossParams(temperature=t, bias=-2.0)
    masks = build_masks(3)

    def loss_of(name):
        def f(w):
            saved = model.params[name]
            model.params[name] = w.reshape(saved.shape)
            try:
                return sigclr_loss(model.forward(images)[1], masks, params).value
            finally:
                model.params[name] = saved
        return f

    _, z = model.forward(images)
    grads = model.backward(sigclr_loss(z, masks, params).grad_embeddings)
    worst = 0.0
    for name, g in grads.items():
        fd = finite_diff_grad(loss_of(name), model.params[name].reshape(g.shape))
        worst = max(worst, max_rel_error(g, fd))
    return CheckResult(f"model end-to-end grad seed={seed}", worst < MODEL_GRAD_TOL, f"{worst:.1e}")


def check_chunk(n: int = 16, dim: int = 16, devices=(1, 2, 4, 8), seed: int = 0) -> List[CheckResult]:
    x = np.random.default_rng(seed).normal(size=(2 * n, dim))
    params = LossParams(learnable_temperature=True)
    mono = sigclr_loss(x, build_masks(n), params)
    out = []
    for D in devices:
        plan = plan_shards(n, D)
        res = chunked_sigclr_loss(x, params, plan, track_visits=True)
        dv = abs(res.value - mono.value)
        dg = float(np.abs(res.grad_embeddings - mono.grad_embeddings).max())
        db = abs(res.grad_bias - mono.grad_bias)
        coverage = bool((res.visits == 1).all())
        peak_ok = all(p == plan.chunk_size ** 2 for p in res.device_peaks)
        ok = max(dv, dg, db) <= CHUNK_TOL and coverage and peak_ok
        if D == 1:
            ok = ok and res.value == mono.value
        out.append(CheckResult(f"chunked D={D}", ok,
                               f"|dvalue|={dv:.1e} |dgrad|={dg:.1e} coverage={coverage} "
                               f"peak={max(res.device_peaks)} (bound {plan.chunk_size ** 2})"))
    return out


def check_masks(max_n: int = 64) -> List[CheckResult]:
    bad = []
    for n in range(1, max_n + 1):
        m = build_masks(n)
        idx = np.arange(2 * n)
        pos = np.argwhere(m.sign == 1)
        expected = np.stack([idx, (idx + n) % (2 * n)], axis=1)
        ok = (
            len(pos) == 2 * n
            and np.array_equal(pos, expected)
            and np.array_equal(m.sign, m.sign.T)
            and set(np.unique(m.sign)) <= {-1.0, 1.0}
            and np.array_equal(m.loss_mask, 1 - np.eye(2 * n))
        )
        if not ok:
            bad.append(n)
    return [CheckResult(f"mask invariants n=1..{max_n}", not bad, f"failing n: {bad}" if bad else "")]


def check_bias_closed_form(seed: int = 0) -> List[CheckResult]:
    x = np.random.default_rng(seed).normal(size=(16, 8))
    p = LossParams()
    res = sigclr_loss(x, build_masks(8), p)
    cf = bias_grad_closed_form(x, build_masks(8), p)
    return [CheckResult("bias gradient closed form", cf == res.grad_bias, f"{float(cf)!r}")]


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "grad": check_grad,
    "chunk": check_chunk,
    "masks": check_masks,
    "loss-values": lambda: check_loss_values() + check_bias_closed_form(),
}
