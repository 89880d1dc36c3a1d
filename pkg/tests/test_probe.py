import math

import numpy as np
import pytest

from sigclr.probe import LinearProbe, ProbeConfig, fit_linear_probe, softmax_cross_entropy, top1


def separable(rng, n=100):
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[y == 1] += 1.0
    x[y == 0] -= 1.0
    return x, y


def test_separable_two_class(rng):
    x, y = separable(rng)
    probe = fit_linear_probe(x, y, 2)
    assert top1(probe, x, y).top1 == 1.0


def test_shuffled_labels_chance_level(rng):
    x = rng.normal(size=(4000, 8))
    y = rng.integers(0, 4, size=4000)
    probe = fit_linear_probe(x[:2000], y[:2000], 4, ProbeConfig(max_epochs=100))
    acc = top1(probe, x[2000:], y[2000:]).top1
    assert abs(acc - 0.25) <= 0.05


def test_duplicated_rows_same_weights(rng):
    x = rng.normal(size=(30, 3))
    y = rng.integers(0, 3, size=30)
    a = fit_linear_probe(x, y, 3, ProbeConfig(max_epochs=50))
    b = fit_linear_probe(np.vstack([x, x]), np.concatenate([y, y]), 3, ProbeConfig(max_epochs=50))
    np.testing.assert_allclose(a.weight, b.weight, atol=1e-10)
    np.testing.assert_allclose(a.bias, b.bias, atol=1e-10)


def test_zero_weights_predict_class_zero(rng):
    x = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, size=50)
    probe = LinearProbe(np.zeros((4, 3)), np.zeros(3), np.zeros(4), np.ones(4))
    res = top1(probe, x, y)
    assert res.top1 == pytest.approx((y == 0).mean())
    assert res.per_class_accuracy == [1.0, 0.0, 0.0]


def test_perfect_weights(rng):
    y = rng.integers(0, 3, size=40)
    x = np.eye(3)[y]
    probe = LinearProbe(np.eye(3), np.zeros(3), np.zeros(3), np.ones(3))
    assert top1(probe, x, y).top1 == 1.0


def test_random_predictor_near_chance():
    rng = np.random.default_rng(0)
    k = 5
    y = rng.integers(0, k, size=20000)
    probe = LinearProbe(rng.normal(size=(6, k)), np.zeros(k), np.zeros(6), np.ones(6))
    acc = top1(probe, rng.normal(size=(20000, 6)), y).top1
    assert abs(acc - 1 / k) < 0.02


def test_cross_entropy_brute_force(rng):
    logits = rng.normal(size=(3, 3))
    y = np.array([2, 0, 1])
    loss, grad = softmax_cross_entropy(logits, y)
    want = 0.0
    for i in range(3):
        denom = sum(math.exp(v) for v in logits[i])
        want -= math.log(math.exp(logits[i, y[i]]) / denom)
    assert loss == pytest.approx(want / 3, abs=1e-12)
    assert grad.sum() == pytest.approx(0.0, abs=1e-15)


def test_probe_errors(rng):
    with pytest.raises(ValueError):
        fit_linear_probe(rng.normal(size=(4, 2)), [0, 0, 0, 0], 1)
    with pytest.raises(ValueError):
        fit_linear_probe(np.zeros((0, 2)), [], 2)
    with pytest.raises(ValueError):
        fit_linear_probe(rng.normal(size=(4, 2)), [0, 1, 2, 0], 2)


def test_early_stop_and_json(rng):
    x, y = separable(rng)
    probe = fit_linear_probe(x, y, 2, ProbeConfig(max_epochs=5000, tol=1e-6))
    assert probe.epochs_run < 5000
    res = top1(probe, x, y)
    assert '"per_class"' in res.to_json() and '"epochs_run"' in res.to_json()
