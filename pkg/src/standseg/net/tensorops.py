"""Layer primitives with hand-written backward passes.

Each forward returns (output, cache); the matching backward consumes the
cache and the upstream gradient. Convolutions are stride-1 with zero
same-padding, realized through sliding-window views and einsum so that no
im2col copy of the input is materialized.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _check_nchw(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be (batch, channels, h, w), got shape {x.shape}")


# -- convolution -------------------------------------------------------------------


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 same-padding correlation of (B,Cin,H,W) with (Cout,Cin,K,K)."""
    _check_nchw(x, "conv input")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weight must be (out, in, k, k), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, Cin, H, W, k, k)
    y = np.einsum("bcijuv,ocuv->boij", windows, w, optimize=True)
    if b is not None:
        y += b[:, None, None]
    return np.ascontiguousarray(y, dtype=x.dtype)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    return conv2d_raw(x, w, b), (x, w)


def conv2d_backward(dy: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) for the same-padding stride-1 convolution."""
    x, w = cache
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.einsum("boij,bcijuv->ocuv", dy, windows, optimize=True).astype(w.dtype)
    db = dy.sum(axis=(0, 2, 3)).astype(w.dtype)
    # dx of a same-padding correlation is another same-padding correlation with
    # the kernel rotated 180 degrees and its channel axes swapped.
    w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = conv2d_raw(dy, w_rot)
    return dx, dw, db


# -- activations --------------------------------------------------------------------


def relu(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    return np.maximum(x, 0), (x > 0,)


def relu_backward(dy: np.ndarray, cache: tuple) -> np.ndarray:
    (positive,) = cache
    return dy * positive


def softmax_channels(z: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis, shifted for stability."""
    _check_nchw(z, "softmax input")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dprobs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back through the channel softmax."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


# -- pooling and upsampling -----------------------------------------------------------


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """2x2 max pooling; ties resolve to the first maximum in row-major window order."""
    _check_nchw(x, "pool input")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool input sides must be even, got {h}x{w}")
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (idx, x.shape)


def maxpool2_backward(dy: np.ndarray, cache: tuple) -> np.ndarray:
    idx, shape = cache
    b, c, h, w = shape
    dwin = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return np.ascontiguousarray(
        dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    )


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling."""
    _check_nchw(x, "upsample input")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h2, w2 = dy.shape
    return dy.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


# -- regularization -----------------------------------------------------------------


def dropout(x: np.ndarray, p: float, rng: np.random.Generator | None) -> tuple[np.ndarray, tuple]:
    """Inverted dropout; identity when p = 0 or no generator is supplied."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0 or rng is None:
        return x, (None, 1.0)
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    return (x * keep * np.asarray(scale, dtype=x.dtype)), (keep, scale)


def dropout_backward(dy: np.ndarray, cache: tuple) -> np.ndarray:
    keep, scale = cache
    if keep is None:
        return dy
    return dy * keep * np.asarray(scale, dtype=dy.dtype)


# -- channel concat ------------------------------------------------------------------


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concat shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(dy: np.ndarray, n_first: int) -> tuple[np.ndarray, np.ndarray]:
    return dy[:, :n_first], dy[:, n_first:]
