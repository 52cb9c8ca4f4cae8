"""
Siamleaf — Layer Kernels.

Forward / backward pairs for the layer types of the backbone, on
``N×C×H×W`` (or ``N×D`` for fully connected) numpy arrays.  Every
``*_forward`` returns ``(out, cache)`` and the matching ``*_backward`` takes
``(dout, cache)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _window(offset: int, count: int, stride: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


# ── Convolution ──────────────────────────────────────────────────────────────


@dataclass
class ConvCache:
    padded: np.ndarray
    weight: np.ndarray
    pad: int
    stride: int


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, pad: int,
                 stride: int = 1) -> tuple[np.ndarray, ConvCache]:
    """2-D cross-correlation with zero padding.

    Accumulates one ``(F, C)`` matrix product per kernel offset instead of
    materializing an im2col buffer.
    """
    n, c, h, w = x.shape
    f, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ValueError(f"input has {c} channels, kernel expects {c_w}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit a {h}x{w} input with padding {pad}")

    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((f, n, ho, wo), dtype=np.result_type(x, weight))
    for i in range(kh):
        for j in range(kw):
            patch = padded[:, :, _window(i, ho, stride), _window(j, wo, stride)]
            out += np.tensordot(weight[:, :, i, j], patch, axes=([1], [1]))
    out += bias[:, None, None, None]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), ConvCache(padded, weight, pad, stride)


def conv_backward(dout: np.ndarray, cache: ConvCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dx, dweight, dbias)``."""
    padded, weight, pad, stride = cache.padded, cache.weight, cache.pad, cache.stride
    _, _, kh, kw = weight.shape
    _, _, ho, wo = dout.shape
    grad = dout.transpose(1, 0, 2, 3)  # F, N, Ho, Wo

    dweight = np.empty_like(weight)
    dpadded = np.zeros_like(padded)
    for i in range(kh):
        for j in range(kw):
            rows, cols = _window(i, ho, stride), _window(j, wo, stride)
            patch = padded[:, :, rows, cols]
            dweight[:, :, i, j] = np.tensordot(grad, patch, axes=([1, 2, 3], [0, 2, 3]))
            dpadded[:, :, rows, cols] += np.tensordot(weight[:, :, i, j], grad, axes=([0], [0])).transpose(1, 0, 2, 3)
    dbias = grad.sum(axis=(1, 2, 3))

    h = padded.shape[2] - 2 * pad
    w = padded.shape[3] - 2 * pad
    dx = dpadded[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(dx), dweight, dbias


# ── ReLU ─────────────────────────────────────────────────────────────────────


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


# ── Local response normalization ─────────────────────────────────────────────


@dataclass
class LRNCache:
    x: np.ndarray
    scale: np.ndarray
    size: int
    alpha: float
    beta: float
    k: float


def _channel_window_sum(a: np.ndarray, size: int) -> np.ndarray:
    """Sum over ``size // 2`` neighbouring channels on each side, truncated at the edges."""
    half = size // 2
    channels = a.shape[1]
    padded = np.pad(a, ((0, 0), (half, half), (0, 0), (0, 0)))
    total = np.zeros_like(a)
    for offset in range(2 * half + 1):
        total += padded[:, offset:offset + channels]
    return total


def lrn_forward(x: np.ndarray, size: int = 5, alpha: float = 1e-4, beta: float = 0.75,
                k: float = 2.0) -> tuple[np.ndarray, LRNCache]:
    """Cross-channel LRN: ``b_c = a_c / (k + alpha/size · Σ_window a²)^beta``."""
    scale = k + (alpha / size) * _channel_window_sum(x * x, size)
    out = x * scale ** (-beta)
    return out, LRNCache(x, scale, size, alpha, beta, k)


def lrn_backward(dout: np.ndarray, cache: LRNCache) -> np.ndarray:
    x, scale, size, alpha, beta = cache.x, cache.scale, cache.size, cache.alpha, cache.beta
    # The window is symmetric, so the channels c' whose window holds c are c's own window.
    cross = _channel_window_sum(dout * x * scale ** (-beta - 1.0), size)
    return dout * scale ** (-beta) - (2.0 * alpha * beta / size) * x * cross


# ── Max pooling ──────────────────────────────────────────────────────────────


@dataclass
class PoolCache:
    input_shape: tuple[int, ...]
    argmax: np.ndarray
    size: int
    stride: int


def maxpool_forward(x: np.ndarray, size: int = 3, stride: int = 2) -> tuple[np.ndarray, PoolCache]:
    """Max pooling without padding: output side ``floor((n - size) / stride) + 1``."""
    n, c, h, w = x.shape
    if h < size or w < size:
        raise ValueError(f"pool window {size} does not fit a {h}x{w} input")
    windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, size * size)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), PoolCache(x.shape, argmax, size, stride)


def maxpool_backward(dout: np.ndarray, cache: PoolCache) -> np.ndarray:
    size, stride, argmax = cache.size, cache.stride, cache.argmax
    _, _, ho, wo = dout.shape
    dx = np.zeros(cache.input_shape, dtype=dout.dtype)
    # Windows of one offset never overlap, so plain in-place adds are exact.
    for i in range(size):
        for j in range(size):
            routed = dout * (argmax == i * size + j)
            dx[:, :, _window(i, ho, stride), _window(j, wo, stride)] += routed
    return dx


# ── Dropout ──────────────────────────────────────────────────────────────────


def dropout_forward(x: np.ndarray, p: float, train: bool, rng: Optional[np.random.Generator] = None,
                    mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout.

    In train mode elements are zeroed with probability *p* and survivors are
    scaled by ``1 / (1 - p)``; the scaled mask is returned as the cache.  A
    precomputed *mask* (already scaled) may be supplied instead of *rng*.  In
    eval mode this is the identity and the cache is ``None``.
    """
    if not train or p == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ValueError("train-mode dropout needs a generator or a mask")
        keep = rng.random(x.shape) >= p
        mask = keep.astype(x.dtype) / np.asarray(1.0 - p, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return dout if mask is None else dout * mask


# ── Fully connected ──────────────────────────────────────────────────────────


def fc_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, tuple]:
    """``x @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} features, weight expects {weight.shape[1]}")
    return x @ weight.T + bias, (x, weight)


def fc_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)
