"""Compact U-Net: encoder with doubling filters, bottleneck, mirrored decoder
with nearest-neighbor upsampling and skip concatenation, softmax head.

Every level is two same-padding convolutions with ReLU. Dropout acts on the
pooled output of each encoder level during training only. Parameters live in
an ordered name -> array mapping whose order is the serialization order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from ..errors import FormatError, ShapeError
from ..rng import rng_for
from . import tensorops as ops

MAGIC = b"SDNN"
VERSION = 1

ModelParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class UNetConfig:
    """Pipeline use: in_channels 5 or 6, n_classes 5, depth 4 at full scale
    (desk-sized checks run depth 2); kernel 3, 5 or 7; dropout up to 0.5."""

    in_channels: int = 5
    n_classes: int = 5
    base_filters: int = 16
    kernel_size: int = 3
    depth: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.base_filters < 1:
            raise ValueError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.dropout <= 0.5:
            raise ValueError(f"dropout must be in [0, 0.5], got {self.dropout}")

    def filters_at(self, level: int) -> int:
        return self.base_filters * (2**level)


def _layer_plan(cfg: UNetConfig) -> list[tuple[str, int, int, int]]:
    """(name, out_channels, in_channels, kernel) for every conv in fixed order."""
    k = cfg.kernel_size
    plan = []
    ch = cfg.in_channels
    for level in range(cfg.depth):
        f = cfg.filters_at(level)
        plan.append((f"enc{level}.conv1", f, ch, k))
        plan.append((f"enc{level}.conv2", f, f, k))
        ch = f
    fb = cfg.filters_at(cfg.depth)
    plan.append(("bottleneck.conv1", fb, ch, k))
    plan.append(("bottleneck.conv2", fb, fb, k))
    ch = fb
    for level in reversed(range(cfg.depth)):
        f = cfg.filters_at(level)
        plan.append((f"dec{level}.up", f, ch, k))
        plan.append((f"dec{level}.conv1", f, 2 * f, k))
        plan.append((f"dec{level}.conv2", f, f, k))
        ch = f
    plan.append(("head", cfg.n_classes, ch, 1))
    return plan


def parameter_names(cfg: UNetConfig) -> list[str]:
    names = []
    for name, _, _, _ in _layer_plan(cfg):
        names.extend([f"{name}.w", f"{name}.b"])
    return names


def parameter_count(cfg: UNetConfig) -> int:
    return sum(out * cin * k * k + out for _, out, cin, k in _layer_plan(cfg))


def init_params(cfg: UNetConfig, seed: int, dtype: str = "f32") -> ModelParams:
    """He fan-in normal weights, zero biases, drawn in fixed layer order."""
    if dtype not in ("f32", "f64"):
        raise ValueError(f"dtype must be f32 or f64, got {dtype!r}")
    target = np.float32 if dtype == "f32" else np.float64
    rng = rng_for(seed, "net-init")
    params: ModelParams = {}
    for name, out, cin, k in _layer_plan(cfg):
        std = np.sqrt(2.0 / (cin * k * k))
        params[f"{name}.w"] = rng.normal(0.0, std, size=(out, cin, k, k)).astype(target)
        params[f"{name}.b"] = np.zeros(out, dtype=target)
    return params


def _check_params(params: ModelParams, cfg: UNetConfig) -> None:
    expected = {
        f"{name}.{suffix}": ((out, cin, k, k) if suffix == "w" else (out,))
        for name, out, cin, k in _layer_plan(cfg)
        for suffix in ("w", "b")
    }
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeError(f"parameter names do not match config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


def _conv_relu(x, params, name, cache):
    y, conv_cache = ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])
    a, relu_cache = ops.relu(y)
    cache[name] = (conv_cache, relu_cache)
    return a


def _conv_relu_backward(dy, params, name, cache, grads):
    conv_cache, relu_cache = cache[name]
    dy = ops.relu_backward(dy, relu_cache)
    dx, dw, db = ops.conv2d_backward(dy, conv_cache)
    grads[f"{name}.w"] = dw
    grads[f"{name}.b"] = db
    return dx


def unet_forward(
    params: ModelParams,
    cfg: UNetConfig,
    batch: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    want_cache: bool = False,
):
    """Class probabilities (B, n_classes, H, W); channel sums are 1.

    With want_cache=True also returns the intermediate cache consumed by
    unet_backward. Dropout fires only when training is set and a generator
    is supplied.
    """
    _check_params(params, cfg)
    ops._check_nchw(batch, "batch")
    b, c, h, w = batch.shape
    if c != cfg.in_channels:
        raise ShapeError(f"batch has {c} channels, config expects {cfg.in_channels}")
    step = 2**cfg.depth
    if h % step or w % step:
        raise ShapeError(f"input sides must be divisible by {step}, got {h}x{w}")

    cache: dict = {"skips": [], "drops": [], "pools": []}
    drop_rng = rng if training else None
    x = batch
    for level in range(cfg.depth):
        x = _conv_relu(x, params, f"enc{level}.conv1", cache)
        x = _conv_relu(x, params, f"enc{level}.conv2", cache)
        cache["skips"].append(x)
        x, pool_cache = ops.maxpool2(x)
        cache["pools"].append(pool_cache)
        x, drop_cache = ops.dropout(x, cfg.dropout, drop_rng)
        cache["drops"].append(drop_cache)

    x = _conv_relu(x, params, "bottleneck.conv1", cache)
    x = _conv_relu(x, params, "bottleneck.conv2", cache)

    for level in reversed(range(cfg.depth)):
        x = ops.upsample2(x)
        x = _conv_relu(x, params, f"dec{level}.up", cache)
        x = ops.concat_channels(cache["skips"][level], x)
        x = _conv_relu(x, params, f"dec{level}.conv1", cache)
        x = _conv_relu(x, params, f"dec{level}.conv2", cache)

    logits = ops.conv2d_raw(x, params["head.w"], params["head.b"])
    cache["head_in"] = x
    probs = ops.softmax_channels(logits)
    cache["probs"] = probs
    if want_cache:
        return probs, cache
    return probs


def unet_backward(
    params: ModelParams, cfg: UNetConfig, cache: dict, dprobs: np.ndarray
) -> ModelParams:
    """Parameter gradients given dL/dprobs from the loss (chained through softmax)."""
    grads: ModelParams = {}
    dz = ops.softmax_backward(dprobs, cache["probs"])
    dx, dw, db = ops.conv2d_backward(dz, (cache["head_in"], params["head.w"]))
    grads["head.w"] = dw
    grads["head.b"] = db

    dskips: list[np.ndarray | None] = [None] * cfg.depth
    for level in range(cfg.depth):
        dx = _conv_relu_backward(dx, params, f"dec{level}.conv2", cache, grads)
        dx = _conv_relu_backward(dx, params, f"dec{level}.conv1", cache, grads)
        f = cfg.filters_at(level)
        dskip, dx = ops.split_channels(dx, f)
        dskips[level] = np.ascontiguousarray(dskip)
        dx = _conv_relu_backward(dx, params, f"dec{level}.up", cache, grads)
        dx = ops.upsample2_backward(dx)

    dx = _conv_relu_backward(dx, params, "bottleneck.conv2", cache, grads)
    dx = _conv_relu_backward(dx, params, "bottleneck.conv1", cache, grads)

    for level in reversed(range(cfg.depth)):
        dx = ops.dropout_backward(dx, cache["drops"][level])
        dx = ops.maxpool2_backward(dx, cache["pools"][level])
        dx = dx + dskips[level]
        dx = _conv_relu_backward(dx, params, f"enc{level}.conv2", cache, grads)
        dx = _conv_relu_backward(dx, params, f"enc{level}.conv1", cache, grads)
    return grads


def predict(params: ModelParams, cfg: UNetConfig, tile: np.ndarray) -> np.ndarray:
    """Per-pixel argmax class codes; ties go to the lowest code."""
    if tile.ndim == 3:
        batch = tile[None]
        squeeze = True
    elif tile.ndim == 4:
        batch = tile
        squeeze = False
    else:
        raise ShapeError(f"tile must be (c, h, w) or (b, c, h, w), got shape {tile.shape}")
    probs = unet_forward(params, cfg, batch, training=False)
    codes = probs.argmax(axis=1).astype(np.uint8)
    return codes[0] if squeeze else codes


# -- model file --------------------------------------------------------------------

_HEADER = struct.Struct("<4sHIIIIIf")


def write_model(stream: BinaryIO, params: ModelParams, cfg: UNetConfig) -> int:
    """Serialize config and tensors (f32) in fixed architecture order."""
    _check_params(params, cfg)
    written = stream.write(
        _HEADER.pack(
            MAGIC,
            VERSION,
            cfg.in_channels,
            cfg.n_classes,
            cfg.base_filters,
            cfg.kernel_size,
            cfg.depth,
            cfg.dropout,
        )
    )
    names = parameter_names(cfg)
    written += stream.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        tensor = np.ascontiguousarray(params[name], dtype="<f4")
        written += stream.write(struct.pack("<B", len(raw)))
        written += stream.write(raw)
        written += stream.write(struct.pack("<B", tensor.ndim))
        written += stream.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        written += stream.write(tensor.tobytes())
    return written


def _take(stream: BinaryIO, n: int, offset: int, what: str) -> bytes:
    raw = stream.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated model file while reading {what}", offset=offset)
    return raw


def read_model(stream: BinaryIO) -> tuple[ModelParams, UNetConfig]:
    head = _take(stream, _HEADER.size, 0, "header")
    magic, version, in_ch, n_cls, base, kernel, depth, dropout = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}", offset=4)
    cfg = UNetConfig(
        in_channels=in_ch,
        n_classes=n_cls,
        base_filters=base,
        kernel_size=kernel,
        depth=depth,
        dropout=float(dropout),
    )
    offset = _HEADER.size
    (count,) = struct.unpack("<I", _take(stream, 4, offset, "tensor count"))
    offset += 4
    names = parameter_names(cfg)
    if count != len(names):
        raise FormatError(f"model holds {count} tensors, config implies {len(names)}", offset=offset - 4)
    params: ModelParams = {}
    for expected_name in names:
        (name_len,) = struct.unpack("<B", _take(stream, 1, offset, "tensor name length"))
        offset += 1
        name = _take(stream, name_len, offset, "tensor name").decode("utf-8")
        offset += name_len
        if name != expected_name:
            raise FormatError(f"tensor {name!r} out of order, expected {expected_name!r}", offset=offset - name_len)
        (rank,) = struct.unpack("<B", _take(stream, 1, offset, "tensor rank"))
        offset += 1
        dims = struct.unpack(f"<{rank}I", _take(stream, 4 * rank, offset, "tensor dims"))
        offset += 4 * rank
        n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = _take(stream, 4 * n_values, offset, f"tensor {name} payload")
        offset += 4 * n_values
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    _check_params(params, cfg)
    return params, cfg


def write_model_file(path, params: ModelParams, cfg: UNetConfig) -> int:
    with open(path, "wb") as fh:
        return write_model(fh, params, cfg)


def read_model_file(path) -> tuple[ModelParams, UNetConfig]:
    with open(path, "rb") as fh:
        return read_model(fh)
