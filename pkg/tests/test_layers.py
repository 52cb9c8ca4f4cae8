"""Tests for services.layers."""

from __future__ import annotations

import numpy as np
import pytest

from services import layers
from tests.conftest import numeric_gradient, relative_error


def _naive_conv(x, w, b, pad, stride):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for r in range(ho):
                for s in range(wo):
                    window = xp[i, :, r * stride:r * stride + kh, s * stride:s * stride + kw]
                    out[i, o, r, s] = np.sum(window * w[o]) + b[o]
    return out


def _naive_lrn(x, size=5, alpha=1e-4, beta=0.75, k=2.0):
    out = np.empty_like(x)
    channels = x.shape[1]
    half = size // 2
    for c in range(channels):
        lo, hi = max(0, c - half), min(channels - 1, c + half)
        total = np.sum(x[:, lo:hi + 1] ** 2, axis=1)
        out[:, c] = x[:, c] / (k + alpha / size * total) ** beta
    return out


def _naive_pool(x, size, stride):
    n, c, h, w = x.shape
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    out = np.empty((n, c, ho, wo))
    for r in range(ho):
        for s in range(wo):
            out[:, :, r, s] = x[:, :, r * stride:r * stride + size, s * stride:s * stride + size].max(axis=(2, 3))
    return out


# ── Convolution ──────────────────────────────────────────────────────────────


@pytest.mark.parametrize("pad,stride", [(0, 1), (1, 1), (2, 1), (1, 2)])
def test_conv_forward_matches_naive_loop(rng, pad, stride):
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out, _ = layers.conv_forward(x, w, b, pad, stride)
    np.testing.assert_allclose(out, _naive_conv(x, w, b, pad, stride), rtol=1e-10, atol=1e-12)


def test_conv_output_size_formula(rng):
    x = rng.normal(size=(1, 3, 128, 128)).astype(np.float32)
    w = rng.normal(size=(2, 3, 5, 5)).astype(np.float32)
    out, _ = layers.conv_forward(x, w, np.zeros(2, np.float32), pad=1)
    assert out.shape == (1, 2, 126, 126)


def test_conv_rejects_channel_mismatch(rng):
    with pytest.raises(ValueError, match="channels"):
        layers.conv_forward(rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 3, 3, 3)), np.zeros(1), 1)


@pytest.mark.parametrize("pad,stride", [(1, 1), (2, 1), (0, 2)])
def test_conv_backward_matches_finite_differences(rng, pad, stride):
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, cache = layers.conv_forward(x, w, b, pad, stride)
    g = rng.normal(size=out.shape)
    dx, dw, db = layers.conv_backward(g, cache)

    def loss():
        return float(np.sum(layers.conv_forward(x, w, b, pad, stride)[0] * g))

    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6
    assert relative_error(dw, numeric_gradient(loss, w)) < 1e-6
    assert relative_error(db, numeric_gradient(loss, b)) < 1e-6


def test_conv_backward_holds_at_coarse_step(rng):
    # The output is linear in x, w and b, so a large step loses nothing.
    x = rng.normal(size=(1, 3, 6, 6))
    w = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    out, cache = layers.conv_forward(x, w, b, 1, 1)
    g = rng.normal(size=out.shape)
    dx, dw, db = layers.conv_backward(g, cache)

    def loss():
        return float(np.sum(layers.conv_forward(x, w, b, 1, 1)[0] * g))

    assert relative_error(dx, numeric_gradient(loss, x, h=1e-3)) < 1e-6
    assert relative_error(dw, numeric_gradient(loss, w, h=1e-3)) < 1e-6
    assert relative_error(db, numeric_gradient(loss, b, h=1e-3)) < 1e-6


# ── ReLU ─────────────────────────────────────────────────────────────────────


def test_relu_forward_and_backward():
    x = np.array([[-1.0, 0.0, 2.0]])
    out, mask = layers.relu_forward(x)
    np.testing.assert_array_equal(out, [[0.0, 0.0, 2.0]])
    np.testing.assert_array_equal(layers.relu_backward(np.ones_like(x), mask), [[0.0, 0.0, 1.0]])


# ── LRN ──────────────────────────────────────────────────────────────────────


def test_lrn_single_active_channel_closed_form():
    x = np.zeros((1, 5, 1, 1))
    x[0, 2] = 1.0
    out, _ = layers.lrn_forward(x)
    assert out[0, 2, 0, 0] == pytest.approx(1.0 / (2.0 + 0.00002) ** 0.75, rel=1e-12)
    assert np.count_nonzero(out) == 1


def test_lrn_zero_input_gives_zero_output():
    out, _ = layers.lrn_forward(np.zeros((2, 8, 3, 3)))
    assert not out.any()


def test_lrn_matches_naive_loop(rng):
    x = rng.normal(scale=30.0, size=(2, 9, 4, 4))
    out, _ = layers.lrn_forward(x)
    np.testing.assert_allclose(out, _naive_lrn(x), rtol=1e-6)


def test_lrn_window_truncates_at_edges(rng):
    x = rng.normal(scale=10.0, size=(1, 3, 2, 2))
    out, _ = layers.lrn_forward(x, size=5, alpha=0.5, beta=0.75, k=1.0)
    np.testing.assert_allclose(out, _naive_lrn(x, 5, 0.5, 0.75, 1.0), rtol=1e-12)


@pytest.mark.parametrize("h,tolerance", [(1e-5, 1e-6), (1e-3, 1e-3)])
def test_lrn_backward_matches_finite_differences(rng, h, tolerance):
    x = rng.normal(size=(2, 7, 3, 3))
    params = dict(size=5, alpha=1.0, beta=0.75, k=1.0)
    out, cache = layers.lrn_forward(x, **params)
    g = rng.normal(size=out.shape)
    dx = layers.lrn_backward(g, cache)

    def loss():
        return float(np.sum(layers.lrn_forward(x, **params)[0] * g))

    assert relative_error(dx, numeric_gradient(loss, x, h=h)) < tolerance


# ── Max pooling ──────────────────────────────────────────────────────────────


@pytest.mark.parametrize("side", [7, 8, 126, 68])
def test_maxpool_output_size(side):
    out, _ = layers.maxpool_forward(np.zeros((1, 1, side, side)), 3, 2)
    assert out.shape[-1] == (side - 3) // 2 + 1


def test_maxpool_matches_naive_loop(rng):
    x = rng.normal(size=(2, 3, 9, 9))
    out, _ = layers.maxpool_forward(x, 3, 2)
    np.testing.assert_array_equal(out, _naive_pool(x, 3, 2))


def test_maxpool_backward_matches_finite_differences(rng):
    x = rng.normal(size=(2, 2, 7, 7))
    out, cache = layers.maxpool_forward(x, 3, 2)
    g = rng.normal(size=out.shape)
    dx = layers.maxpool_backward(g, cache)

    def loss():
        return float(np.sum(layers.maxpool_forward(x, 3, 2)[0] * g))

    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6


def test_maxpool_backward_accumulates_overlapping_windows():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0  # shared by all four 3×3 windows
    out, cache = layers.maxpool_forward(x, 3, 2)
    dx = layers.maxpool_backward(np.ones_like(out), cache)
    assert dx[0, 0, 2, 2] == 4.0
    assert dx.sum() == 4.0


# ── Dropout ──────────────────────────────────────────────────────────────────


def test_dropout_eval_mode_is_identity(rng):
    x = rng.normal(size=(4, 10))
    out, mask = layers.dropout_forward(x, 0.5, train=False)
    assert out is x and mask is None
    assert layers.dropout_backward(x, None) is x


def test_dropout_train_mode_scales_survivors(rng):
    x = np.ones((200, 500))
    out, mask = layers.dropout_forward(x, 0.2, train=True, rng=rng)
    survivors = out[out != 0]
    np.testing.assert_allclose(survivors, 1.0 / 0.8)
    assert abs(np.mean(out == 0) - 0.2) < 0.01
    assert abs(out.mean() - 1.0) < 0.01
    np.testing.assert_array_equal(layers.dropout_backward(np.ones_like(x), mask), mask)


def test_dropout_same_seed_same_mask():
    x = np.ones((3, 50))
    a, _ = layers.dropout_forward(x, 0.5, True, np.random.default_rng(7))
    b, _ = layers.dropout_forward(x, 0.5, True, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_dropout_train_mode_needs_randomness():
    with pytest.raises(ValueError):
        layers.dropout_forward(np.ones(3), 0.5, train=True)


# ── Fully connected ──────────────────────────────────────────────────────────


def test_fc_backward_matches_finite_differences(rng):
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(4, 6))
    b = rng.normal(size=4)
    out, cache = layers.fc_forward(x, w, b)
    g = rng.normal(size=out.shape)
    dx, dw, db = layers.fc_backward(g, cache)

    def loss():
        return float(np.sum(layers.fc_forward(x, w, b)[0] * g))

    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-7
    assert relative_error(dw, numeric_gradient(loss, w)) < 1e-7
    assert relative_error(db, numeric_gradient(loss, b)) < 1e-7


def test_fc_rejects_feature_mismatch(rng):
    with pytest.raises(ValueError, match="features"):
        layers.fc_forward(rng.normal(size=(2, 5)), rng.normal(size=(3, 6)), np.zeros(3))
