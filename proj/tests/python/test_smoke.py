import math

import numpy as np
import pytest

import _mha


def small_instance(seed=0):
    rng = np.random.default_rng(seed)
    T, d, H = 4, 3, 2
    X = rng.uniform(-1, 1, size=(T, d))
    heads = [(rng.uniform(-1, 1, size=(T, d)), rng.uniform(-1, 1, size=(d, d))) for _ in range(H)]
    return X, heads


def test_forward_finite():
    X, heads = small_instance()
    v = _mha.forward(X, heads)
    assert math.isfinite(v)


def test_grad_matches_finite_differences():
    X, heads = small_instance(1)
    grads = _mha.grad(X, heads)
    h = 1e-6
    for hi, (U, W) in enumerate(heads):
        for mat, g in ((U, grads[hi][0]), (W, grads[hi][1])):
            it = np.nditer(mat, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = mat[idx]
                mat[idx] = orig + h
                fp = _mha.forward(X, heads)
                mat[idx] = orig - h
                fm = _mha.forward(X, heads)
                mat[idx] = orig
                fd = (fp - fm) / (2 * h)
                assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_risk_at_zero_is_log2():
    Xs, ys, _ = _mha.dm1_sample(8, seed=3)
    T, d = Xs[0].shape
    heads = [(np.zeros((T, d)), np.zeros((d, d)))]
    assert _mha.empirical_risk(Xs, ys, heads) == pytest.approx(math.log(2), rel=1e-12)


def test_dm1_shapes_and_labels():
    Xs, ys, R = _mha.dm1_sample(16, d=4, T=10, seed=5)
    assert len(Xs) == 16 and len(ys) == 16
    assert all(X.shape == (10, 4) for X in Xs)
    assert set(ys) <= {-1, 1}
    assert R > 0


def test_train_gd_reduces_risk():
    Xs, ys, _ = _mha.dm1_sample(32, seed=7)
    heads, losses = _mha.train_gd(Xs, ys, H=2, eta=0.5, K=40)
    assert len(heads) == 2
    assert losses[-1] < losses[0]
    assert _mha.empirical_risk(Xs, ys, heads) == pytest.approx(losses[-1], rel=1e-9)
