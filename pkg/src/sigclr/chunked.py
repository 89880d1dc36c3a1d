"""Device-sharded sigmoid loss with ring exchange of embedding chunks.

The ``2n`` rows of a two-view batch are split across ``D`` simulated
devices.  In ring step ``s`` every device scores its local chunk against the
chunk that originated on device ``(d + s*direction) % D`` and then hands that
chunk to its ring neighbour.  Only one ``b' x b'`` block of pair entries is
alive per device at any time, against ``(2n)^2`` for the monolithic loss.
Because every pair term is independent, the result equals the monolithic
loss up to summation order.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .kernel import matmul, ordered_sum
from .losses import (
    LossOutput,
    LossParams,
    masks_for_block,
    normalization_backward,
    normalize_checked,
    sigmoid_block,
    temperature_grad,
)


class ShardDivisibilityError(ValueError):
    """The device count does not divide the number of batch rows."""


class ShardMismatchError(ValueError):
    """A shard plan was built for a different batch size."""


@dataclass(frozen=True)
class ShardPlan:
    devices: int
    chunk_size: int
    total_rows: int
    direction: int = 1

    @property
    def schedule(self) -> List[List[tuple]]:
        """``schedule[s]`` lists ``(device, source_device)`` for ring step ``s``."""
        D = self.devices
        return [[(d, (d + self.direction * s) % D) for d in range(D)] for s in range(D)]

    def rows_of(self, device: int) -> np.ndarray:
        return np.arange(device * self.chunk_size, (device + 1) * self.chunk_size)


def plan_shards(n: int, devices: int, direction: int = 1) -> ShardPlan:
    if devices < 1:
        raise ValueError(f"need at least one device, got {devices}")
    if direction not in (1, -1):
        raise ValueError("ring direction must be +1 or -1")
    total = 2 * n
    if devices > total or total % devices:
        raise ShardDivisibilityError(f"{devices} devices do not evenly split {total} rows")
    return ShardPlan(devices=devices, chunk_size=total // devices, total_rows=total, direction=direction)


def chunk_exchange_count(plan: ShardPlan) -> int:
    return plan.devices * (plan.devices - 1)


class BlockTracker:
    """Counts pair-matrix entries that are simultaneously alive on a device."""

    def __init__(self, devices: int):
        self.live = [0] * devices
        self.peak = [0] * devices
        self._lock = threading.Lock()

    @contextmanager
    def block(self, device: int, rows: int, cols: int):
        with self._lock:
            self.live[device] += rows * cols
            self.peak[device] = max(self.peak[device], self.live[device])
        try:
            yield
        finally:
            with self._lock:
                self.live[device] -= rows * cols


@dataclass
class DeviceState:
    device_id: int
    global_rows: np.ndarray
    local_rows: np.ndarray            # unit-normalized local chunk
    local_norms: np.ndarray
    incoming_id: int = -1
    incoming_rows: Optional[np.ndarray] = None
    partial_loss: float = 0.0
    partial_bias: float = 0.0
    partial_temp: float = 0.0
    partial_grads: Dict[int, np.ndarray] = field(default_factory=dict)
    peak_block_elems: int = 0


@dataclass
class ChunkedLossOutput(LossOutput):
    device_peaks: List[int] = field(default_factory=list)
    exchanges: int = 0
    visits: Optional[np.ndarray] = None


def _device_step(state: DeviceState, plan: ShardPlan, n: int, params: LossParams,
                 normalizer: int, tracker: BlockTracker, visits) -> None:
    src = state.incoming_id
    remote = state.incoming_rows
    cols = plan.rows_of(src)
    b = plan.chunk_size
    with tracker.block(state.device_id, b, b):
        sign, loss_mask = masks_for_block(state.global_rows, cols, n)
        dtype = state.local_rows.dtype
        terms, cos, dlogit = sigmoid_block(
            state.local_rows, remote, sign.astype(dtype), loss_mask.astype(dtype),
            params.temperature, params.bias, normalizer,
        )
        state.partial_loss = state.partial_loss + ordered_sum(terms)
        state.partial_bias = state.partial_bias + ordered_sum(dlogit)
        state.partial_temp = state.partial_temp + ordered_sum(dlogit * cos)
        dcos = params.temperature * dlogit
        local = state.partial_grads.setdefault(state.device_id, np.zeros_like(state.local_rows))
        local += matmul(dcos, remote)
        other = state.partial_grads.setdefault(src, np.zeros_like(remote))
        other += matmul(dcos.T, state.local_rows)
        if visits is not None:
            visits[np.ix_(state.global_rows, cols)] += 1
    state.peak_block_elems = tracker.peak[state.device_id]


def chunked_sigclr_loss(batch, params: LossParams, plan: ShardPlan, threads: int = 1,
                        track_visits: bool = False) -> ChunkedLossOutput:
    """Sigmoid loss computed block-by-block across simulated devices."""
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[0] != plan.total_rows:
        raise ShardMismatchError(f"plan covers {plan.total_rows} rows, batch has shape {x.shape}")
    n = plan.total_rows // 2
    D = plan.devices
    normalizer = params.normalizer(plan.total_rows)

    devices = []
    for d in range(D):
        rows = plan.rows_of(d)
        unit, norms = normalize_checked(x[rows])
        devices.append(DeviceState(d, rows, unit, norms, incoming_id=d, incoming_rows=unit))

    tracker = BlockTracker(D)
    visits = np.zeros((plan.total_rows, plan.total_rows), dtype=np.int64) if track_visits else None
    exchanges = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and D > 1 else None
    try:
        for step in range(D):
            if step > 0:
                # ring shift: every device receives the buffer its neighbour held
                held = [(s.incoming_id, s.incoming_rows) for s in devices]
                for s in devices:
                    s.incoming_id, s.incoming_rows = held[(s.device_id + plan.direction) % D]
                    exchanges += 1
            assert all(s.incoming_id == src for s, (_, src) in zip(devices, plan.schedule[step]))
            work = lambda s: _device_step(s, plan, n, params, normalizer, tracker, visits)
            if pool is None:
                for s in devices:
                    work(s)
            else:
                list(pool.map(work, devices))  # barrier: all blocks of this round finish
    finally:
        if pool is not None:
            pool.shutdown()

    # ordered all-reduce, ascending device id
    value = 0.0
    grad_bias = 0.0
    grad_t = 0.0
    grad = np.zeros_like(x, dtype=devices[0].local_rows.dtype)
    for owner in devices:
        acc = np.zeros_like(owner.local_rows)
        for s in devices:
            if owner.device_id in s.partial_grads:
                acc = acc + s.partial_grads[owner.device_id]
        grad[owner.global_rows] = normalization_backward(acc, owner.local_rows, owner.local_norms)
    for s in devices:
        value = value + s.partial_loss
        grad_bias = grad_bias + s.partial_bias
        grad_t = grad_t + s.partial_temp

    return ChunkedLossOutput(
        value=value / normalizer,
        grad_embeddings=grad,
        grad_bias=grad_bias,
        grad_temperature=temperature_grad(grad_t, params),
        device_peaks=[s.peak_block_elems for s in devices],
        exchanges=exchanges,
        visits=visits,
    )
