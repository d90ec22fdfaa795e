"""Training loop: shuffled epochs, pooled validation loss, early stopping.

Improvement means a strict decrease of the best validation loss seen so far;
ties do not reset patience. The weights returned are a bitwise snapshot of
the best epoch. Samples are (input (C,H,W), one-hot target (c,H,W), valid
mask (H,W) or None) triples; nodata pixels never reach the loss or metrics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError
from ..metrics import ConfusionMatrix, confusion, macro_mcc
from ..rng import rng_for
from .loss import LossConfig, focal_tversky_grad, loss_from_counts, tversky_counts
from .optim import AdamState, TrainConfig, adam_step
from .unet import ModelParams, UNetConfig, unet_backward, unet_forward

Sample = tuple[np.ndarray, np.ndarray, np.ndarray | None]


@dataclass(frozen=True)
class HistoryEntry:
    epoch: int
    train_loss: float
    val_loss: float
    val_mmcc: float


def history_to_csv(history: Sequence[HistoryEntry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "val_mmcc"])
    for h in history:
        writer.writerow([h.epoch, f"{h.train_loss:.8f}", f"{h.val_loss:.8f}", f"{h.val_mmcc:.8f}"])
    return buf.getvalue()


def _stack_batch(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    xs, gs, ms = zip(*samples)
    x = np.stack(xs)
    g = np.stack(gs)
    if all(m is None for m in ms):
        return x, g, None
    h, w = x.shape[2:]
    mask = np.stack([np.ones((h, w), dtype=bool) if m is None else m for m in ms])
    return x, g, mask


def _batches(n: int, size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, size):
        yield idx[start : start + size]


def _snapshot(params: ModelParams) -> ModelParams:
    return {name: arr.copy() for name, arr in params.items()}


def evaluate_tiles(
    params: ModelParams,
    cfg: UNetConfig,
    loss_cfg: LossConfig,
    tiles: Sequence[Sample],
    batch_size: int = 8,
) -> tuple[float, float]:
    """Pooled (loss, macro MCC) over a tile set: Tversky counts and the
    confusion matrix accumulate across every batch before either metric
    is computed, so batch boundaries cannot change the result."""
    c = cfg.n_classes
    tp = np.zeros(c)
    fp = np.zeros(c)
    fn = np.zeros(c)
    cm = np.zeros((c, c), dtype=np.int64)
    for batch_idx in _batches(len(tiles), batch_size):
        x, g, mask = _stack_batch([tiles[i] for i in batch_idx])
        probs = unet_forward(params, cfg, x, training=False)
        btp, bfp, bfn = tversky_counts(probs, g, mask)
        tp += btp
        fp += bfp
        fn += bfn
        pred = probs.argmax(axis=1)
        ref = g.argmax(axis=1)
        cm += confusion(pred, ref, c, mask).counts
    loss = loss_from_counts(tp, fp, fn, loss_cfg)
    mmcc = macro_mcc(ConfusionMatrix(cm))
    return loss, mmcc


def train(
    model: ModelParams,
    cfg: UNetConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    train_tiles: Sequence[Sample],
    val_tiles: Sequence[Sample],
    val_metrics_fn: Callable[[ModelParams, int], tuple[float, float]] | None = None,
    log_fn: Callable[[HistoryEntry], None] | None = None,
) -> tuple[ModelParams, list[HistoryEntry]]:
    """Train a copy of the model; the input dict is left untouched.

    Per-epoch training loss is the mean of batch losses (weights move
    between batches, so pooling over the epoch would mix models).
    val_metrics_fn may replace the built-in pooled validation pass; it
    receives the current weights and the epoch number and returns
    (val_loss, val_mmcc).
    """
    if not train_tiles:
        raise ValueError("training needs at least one training tile")
    if not val_tiles and val_metrics_fn is None:
        raise ValueError("training needs at least one validation tile")
    x0 = train_tiles[0][0]
    if x0.ndim != 3 or x0.shape[0] != cfg.in_channels:
        raise ShapeError(f"sample shape {x0.shape} does not match {cfg.in_channels} input channels")

    params = _snapshot(model)
    shuffle_rng = rng_for(train_cfg.seed, "train-shuffle")
    dropout_rng = rng_for(train_cfg.seed, "train-dropout")
    state = AdamState()

    best = _snapshot(params)
    best_val = math.inf
    stale = 0
    history: list[HistoryEntry] = []

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_tiles))
        batch_losses = []
        for batch_idx in _batches(len(train_tiles), train_cfg.batch_size, order):
            x, g, mask = _stack_batch([train_tiles[i] for i in batch_idx])
            probs, cache = unet_forward(
                params, cfg, x, training=True, rng=dropout_rng, want_cache=True
            )
            loss, dprobs = focal_tversky_grad(probs, g, loss_cfg, mask)
            grads = unet_backward(params, cfg, cache, dprobs)
            adam_step(params, grads, state, train_cfg)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))

        if val_metrics_fn is not None:
            val_loss, val_mmcc = val_metrics_fn(params, epoch)
        else:
            val_loss, val_mmcc = evaluate_tiles(params, cfg, loss_cfg, val_tiles, train_cfg.batch_size)
        entry = HistoryEntry(epoch, train_loss, val_loss, val_mmcc)
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)

        if val_loss < best_val:
            best_val = val_loss
            best = _snapshot(params)
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    return best, history
