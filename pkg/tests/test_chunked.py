import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigclr.chunked import (
    ShardDivisibilityError,
    ShardMismatchError,
    chunk_exchange_count,
    chunked_sigclr_loss,
    plan_shards,
)
from sigclr.losses import DegenerateEmbeddingError, LossParams, build_masks, sigclr_loss


@pytest.fixture
def batch():
    return np.random.default_rng(7).normal(size=(32, 16))


def test_plan_arithmetic():
    plan = plan_shards(16, 4)
    assert plan.chunk_size == 8 and plan.total_rows == 32
    assert len(plan.schedule) == 4
    single = plan_shards(16, 1)
    assert single.chunk_size == 32 and len(single.schedule) == 1


def test_plan_rejects_bad_splits():
    with pytest.raises(ShardDivisibilityError):
        plan_shards(15, 4)
    with pytest.raises(ShardDivisibilityError):
        plan_shards(2, 8)
    with pytest.raises(ValueError):
        plan_shards(4, 0)


@pytest.mark.parametrize("D", [1, 2, 4, 8])
def test_schedule_covers_every_block_once(D):
    plan = plan_shards(16, D)
    pairs = [p for step in plan.schedule for p in step]
    assert sorted(pairs) == [(i, j) for i in range(D) for j in range(D)]


@pytest.mark.parametrize("D,expected", [(1, 0), (4, 12), (8, 56)])
def test_exchange_count(D, expected):
    assert chunk_exchange_count(plan_shards(32, D)) == expected


def test_single_device_is_bit_identical(batch):
    p = LossParams()
    mono = sigclr_loss(batch, build_masks(16), p)
    res = chunked_sigclr_loss(batch, p, plan_shards(16, 1))
    assert res.value == mono.value
    assert np.array_equal(res.grad_embeddings, mono.grad_embeddings)
    assert res.grad_bias == mono.grad_bias


@pytest.mark.parametrize("direction", [1, -1])
@pytest.mark.parametrize("D", [2, 4, 8])
def test_equivalence_with_monolithic(batch, D, direction):
    p = LossParams(temperature=2.0, bias=-3.0, learnable_temperature=True)
    mono = sigclr_loss(batch, build_masks(16), p)
    res = chunked_sigclr_loss(batch, p, plan_shards(16, D, direction), track_visits=True)
    assert abs(res.value - mono.value) <= 1e-9
    assert np.abs(res.grad_embeddings - mono.grad_embeddings).max() <= 1e-9
    assert abs(res.grad_bias - mono.grad_bias) <= 1e-9
    assert abs(res.grad_temperature - mono.grad_temperature) <= 1e-9
    assert np.all(res.visits == 1)
    assert res.exchanges == chunk_exchange_count(plan_shards(16, D))


def test_memory_instrumentation():
    x = np.random.default_rng(0).normal(size=(64, 8))
    res = chunked_sigclr_loss(x, LossParams(), plan_shards(32, 8))
    assert res.device_peaks == [64] * 8
    full = chunked_sigclr_loss(x, LossParams(), plan_shards(32, 1))
    assert full.device_peaks == [4096]


@pytest.mark.parametrize("D", [2, 4, 8])
def test_threaded_matches_sequential(batch, D):
    p = LossParams()
    seq = chunked_sigclr_loss(batch, p, plan_shards(16, D), threads=1)
    par = chunked_sigclr_loss(batch, p, plan_shards(16, D), threads=4)
    assert seq.value == par.value
    assert np.array_equal(seq.grad_embeddings, par.grad_embeddings)


def test_mean_normalization_propagates(batch):
    p = LossParams(normalization="mean")
    mono = sigclr_loss(batch, build_masks(16), p)
    res = chunked_sigclr_loss(batch, p, plan_shards(16, 4))
    assert abs(res.value - mono.value) <= 1e-12


def test_errors(batch):
    with pytest.raises(ShardMismatchError):
        chunked_sigclr_loss(batch[:16], LossParams(), plan_shards(16, 4))
    bad = batch.copy()
    bad[5] = 0
    with pytest.raises(DegenerateEmbeddingError):
        chunked_sigclr_loss(bad, LossParams(), plan_shards(16, 4))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 1000), st.data())
def test_equivalence_property(n, seed, data):
    rows = 2 * n
    D = data.draw(st.sampled_from([d for d in range(1, rows + 1) if rows % d == 0]))
    x = np.random.default_rng(seed).normal(size=(rows, 5))
    p = LossParams(temperature=5.0, bias=-10.0)
    mono = sigclr_loss(x, build_masks(n), p)
    res = chunked_sigclr_loss(x, p, plan_shards(n, D), track_visits=True)
    assert abs(res.value - mono.value) <= 1e-9
    assert np.abs(res.grad_embeddings - mono.grad_embeddings).max() <= 1e-9
    assert np.all(res.visits == 1)
    assert max(res.device_peaks) <= (rows // D) ** 2
