import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigclr.kernel import (
    ShapeError,
    finite_diff_grad,
    l2_normalize_rows,
    log_sigmoid,
    logsumexp,
    matmul,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    out = [[0.0] * b.shape[1] for _ in range(a.shape[0])]
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += float(a[i, k]) * float(b[k, j])
            out[i][j] = acc
    return np.array(out)


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_sum():
    assert np.array_equal(matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]])), [[3.0], [7.0]])


def test_matmul_matches_triple_loop_bitwise(rng):
    a = rng.normal(size=(16, 8))
    b = rng.normal(size=(8, 4))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 6))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-10)


def test_matmul_deterministic(rng):
    a, b = rng.normal(size=(20, 30)), rng.normal(size=(30, 10))
    assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()


def test_normalize_examples():
    out = l2_normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out[0], [0.6, 0.8], atol=1e-15)
    assert np.array_equal(out[1], [0.0, 0.0])
    np.testing.assert_allclose(out[2], [1.0, 0.0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-100, 100)))
def test_normalize_idempotent(m):
    m = m[np.linalg.norm(m, axis=1) >= 1e-6]
    once = l2_normalize_rows(m) if len(m) else m
    if len(m):
        np.testing.assert_allclose(l2_normalize_rows(once), once, atol=1e-14)


def test_log_sigmoid_examples():
    assert log_sigmoid(0.0) == pytest.approx(-math.log(2), abs=1e-15)
    assert log_sigmoid(-100.0) == pytest.approx(-100.0, abs=1e-9)
    # mpmath, 50 digits: log(1/(1+e^-50)) = -1.928749847963917783e-22
    assert log_sigmoid(50.0) == pytest.approx(-1.928749847963917783e-22, rel=1e-12)


def test_log_sigmoid_no_overflow():
    vals = log_sigmoid(np.array([-1e6, -800.0, 800.0, 1e6]))
    assert np.all(np.isfinite(vals))


@given(st.floats(-30, 30))
def test_sigmoid_complement(x):
    assert math.exp(log_sigmoid(x)) + math.exp(log_sigmoid(-x)) == pytest.approx(1.0, abs=1e-12)


def test_logsumexp_examples(rng):
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
    v = rng.normal(size=10)
    assert logsumexp(v) == pytest.approx(math.log(sum(math.exp(x) for x in v)), abs=1e-12)
    with pytest.raises(ShapeError):
        logsumexp([])


def test_finite_diff_examples():
    assert finite_diff_grad(lambda x: float(x[0, 0] ** 2), np.array([[3.0]]))[0, 0] == pytest.approx(6, abs=1e-6)
    g = finite_diff_grad(lambda x: x.sum(), np.zeros((3, 4)))
    np.testing.assert_allclose(g, np.ones((3, 4)), atol=1e-9)


def test_finite_diff_leaves_input_untouched(rng):
    x = rng.normal(size=(2, 3))
    before = x.copy()
    finite_diff_grad(lambda m: (m ** 3).sum(), x)
    assert np.array_equal(x, before)
