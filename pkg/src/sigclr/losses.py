"""Sigmoid pairwise contrastive loss (SigCLR) and the NT-Xent baseline.

Batches are ``2n x dim`` arrays: rows ``0..n-1`` hold the first view of
each item, rows ``n..2n-1`` the second view, so the positive partner of
row ``i`` is row ``(i + n) % 2n``.  Both losses work on cosine similarity
and return exact analytic gradients with respect to the raw (unnormalized)
embedding rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import log_sigmoid, matmul, ordered_sum, row_norms, sigmoid

NORM_EPS = 1e-12


class DegenerateEmbeddingError(ValueError):
    """An embedding row is (numerically) zero, so its cosine is undefined."""


@dataclass(frozen=True)
class PairMasks:
    sign: np.ndarray       # +1 for positive pairs, -1 for negatives
    loss_mask: np.ndarray  # 0 on self-pairs, 1 elsewhere

    @property
    def n(self) -> int:
        return self.sign.shape[0] // 2


@dataclass
class LossParams:
    temperature: float = 5.0
    bias: float = -10.0
    learnable_temperature: bool = False
    temperature_param_space: str = "log"  # "log" or "raw"; only used when learnable
    normalization: str = "per-row"        # "per-row" -> 1/2n, "mean" -> 1/(2n)^2

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.temperature_param_space not in ("log", "raw"):
            raise ValueError(f"unknown temperature_param_space {self.temperature_param_space!r}")
        if self.normalization not in ("per-row", "mean"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    def normalizer(self, total_rows: int) -> int:
        return total_rows if self.normalization == "per-row" else total_rows * total_rows


@dataclass
class LossOutput:
    value: float
    grad_embeddings: np.ndarray
    grad_bias: float = 0.0
    grad_temperature: float = 0.0
    pair_terms: Optional[np.ndarray] = None


def build_masks(n: int) -> PairMasks:
    if n < 1:
        raise ValueError(f"need at least one pair, got n={n}")
    diag = np.arange(2 * n)
    shifted = np.roll(diag, n)
    sign = -np.ones((2 * n, 2 * n))
    sign[diag, shifted] = 1.0
    loss_mask = np.ones((2 * n, 2 * n))
    loss_mask[diag, diag] = 0.0
    return PairMasks(sign=sign, loss_mask=loss_mask)


def masks_for_block(rows: np.ndarray, cols: np.ndarray, n: int):
    """Sign and loss-mask sub-blocks for global row/column indices."""
    rows = np.asarray(rows)[:, None]
    cols = np.asarray(cols)[None, :]
    sign = np.where(cols == (rows + n) % (2 * n), 1.0, -1.0)
    loss_mask = np.where(rows == cols, 0.0, 1.0)
    return sign, loss_mask


def normalize_checked(x: np.ndarray, eps: float = NORM_EPS):
    """Unit-normalize rows, refusing rows with norm below ``eps``."""
    norms = row_norms(x)
    bad = np.flatnonzero(~(norms >= eps))
    if bad.size:
        raise DegenerateEmbeddingError(
            f"{bad.size} embedding row(s) have norm < {eps} (first: row {bad[0]})"
        )
    return x / norms[:, None], norms


def normalization_backward(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. unit rows back to the raw rows."""
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms[:, None]


def sigmoid_block(unit_i, unit_j, sign, loss_mask, temperature, bias, normalizer):
    """Pair terms and logit derivatives for one block of the pair matrix.

    Returns ``(terms, cos, dlogit)`` where ``terms`` are the non-negative
    per-pair losses (before the ``1/N`` prefactor) and ``dlogit`` is the
    derivative of the normalized loss w.r.t. each logit ``t*cos + b``.
    """
    cos = matmul(unit_i, unit_j.T)
    logits = temperature * cos + bias
    signed = sign * logits
    terms = np.where(loss_mask > 0, -log_sigmoid(signed), 0.0)
    dlogit = -(loss_mask * sign * sigmoid(-signed)) / normalizer
    return terms, cos, dlogit


def temperature_grad(grad_raw_t: float, params: LossParams) -> float:
    if not params.learnable_temperature:
        return 0.0
    if params.temperature_param_space == "log":
        # t = exp(t'), dL/dt' = t dL/dt
        return grad_raw_t * params.temperature
    return grad_raw_t


def sigclr_loss(batch, masks: PairMasks, params: LossParams, keep_pair_terms: bool = False) -> LossOutput:
    """Sigmoid contrastive loss over all ``(2n)^2`` pairs of a two-view batch."""
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[0] % 2:
        raise ValueError(f"batch must be a 2n x dim matrix, got shape {x.shape}")
    if masks.sign.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"masks built for {masks.sign.shape[0]} rows, batch has {x.shape[0]}")
    unit, norms = normalize_checked(x)
    t = params.temperature
    N = params.normalizer(x.shape[0])
    sign = masks.sign.astype(x.dtype, copy=False)
    loss_mask = masks.loss_mask.astype(x.dtype, copy=False)
    terms, cos, dlogit = sigmoid_block(unit, unit, sign, loss_mask, t, params.bias, N)

    value = ordered_sum(terms) / N
    dcos = t * dlogit
    grad_unit = matmul(dcos, unit) + matmul(dcos.T, unit)
    return LossOutput(
        value=value,
        grad_embeddings=normalization_backward(grad_unit, unit, norms),
        grad_bias=ordered_sum(dlogit),
        grad_temperature=temperature_grad(ordered_sum(dlogit * cos), params),
        pair_terms=terms if keep_pair_terms else None,
    )


def bias_grad_closed_form(batch, masks: PairMasks, params: LossParams) -> float:
    """``-(1/N) sum_ij k_ij z_ij sigmoid(-z_ij (t cos_ij + b))``."""
    unit, _ = normalize_checked(np.asarray(batch))
    cos = matmul(unit, unit.T)
    z = masks.sign
    N = params.normalizer(unit.shape[0])
    per_pair = -(masks.loss_mask * z * sigmoid(-z * (params.temperature * cos + params.bias))) / N
    return ordered_sum(per_pair)


def ntxent_loss(batch, temperature: float) -> LossOutput:
    """Normalized temperature-scaled cross entropy (the SimCLR objective)."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[0] % 2:
        raise ValueError(f"batch must be a 2n x dim matrix, got shape {x.shape}")
    rows = x.shape[0]
    n = rows // 2
    unit, norms = normalize_checked(x)
    idx = np.arange(rows)
    partner = (idx + n) % rows

    logits = matmul(unit, unit.T) / temperature
    logits[idx, idx] = -np.inf
    shift = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - shift)
    denom = np.cumsum(expd, axis=1)[:, -1:]
    lse = shift[:, 0] + np.log(denom[:, 0])
    per_row = lse - logits[idx, partner]
    value = ordered_sum(per_row) / rows

    dlogits = expd / denom
    dlogits[idx, partner] -= 1.0
    dcos = dlogits / (rows * temperature)
    grad_unit = matmul(dcos, unit) + matmul(dcos.T, unit)
    return LossOutput(value=value, grad_embeddings=normalization_backward(grad_unit, unit, norms))
