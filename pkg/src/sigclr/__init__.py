"""Sigmoid contrastive learning (SigCLR) on a small numpy stack."""
from .chunked import ShardPlan, chunk_exchange_count, chunked_sigclr_loss, plan_shards
from .losses import (
    LossOutput,
    LossParams,
    PairMasks,
    bias_grad_closed_form,
    build_masks,
    ntxent_loss,
    sigclr_loss,
)

__all__ = [
    "LossOutput", "LossParams", "PairMasks", "ShardPlan", "bias_grad_closed_form", "build_masks",
    "chunk_exchange_count", "chunked_sigclr_loss", "ntxent_loss", "plan_shards", "sigclr_loss",
]
__version__ = "0.1.0"
