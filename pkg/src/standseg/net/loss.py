"""Soft focal Tversky loss over batch-pooled per-class counts.

Counts are soft (probability-weighted) and pooled over every unmasked pixel
of the batch: TP_i = sum p_i*g_i, FP_i = sum p_i*(1-g_i), FN_i = sum
(1-p_i)*g_i. The index for class i is (TP+eps)/(TP + alpha*FP + beta*FN +
eps) and the loss averages (1 - TI_i)^(1/gamma) over classes. beta is always
1 - alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class LossConfig:
    """alpha weights false positives, 1 - alpha the false negatives;
    gamma >= 1 focuses the loss on poorly segmented classes."""

    alpha: float = 0.5
    gamma: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be inside (0, 1), got {self.alpha}")
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha


def _check_pair(probs: np.ndarray, target: np.ndarray, mask: np.ndarray | None) -> None:
    if probs.shape != target.shape:
        raise ShapeError(f"probs shape {probs.shape} != target shape {target.shape}")
    if probs.ndim != 4:
        raise ShapeError(f"expected (batch, classes, h, w), got shape {probs.shape}")
    if mask is not None and mask.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match batch {probs.shape}")


def tversky_counts(
    probs: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class soft (TP, FP, FN) pooled over all unmasked pixels, float64."""
    _check_pair(probs, target, mask)
    p = probs.astype(np.float64, copy=False)
    g = target.astype(np.float64, copy=False)
    if mask is not None:
        m = mask.astype(np.float64)[:, None]
        p = p * m
        g = g * m
    axes = (0, 2, 3)
    tp = (p * g).sum(axis=axes)
    fp = p.sum(axis=axes) - tp
    fn = g.sum(axis=axes) - tp
    return tp, fp, fn


def tversky_index(
    probs: np.ndarray,
    target: np.ndarray,
    class_index: int,
    cfg: LossConfig,
    mask: np.ndarray | None = None,
) -> float:
    """Soft Tversky index of one class over the pooled batch counts."""
    tp, fp, fn = tversky_counts(probs, target, mask)
    i = class_index
    denom = tp[i] + cfg.alpha * fp[i] + cfg.beta * fn[i] + cfg.epsilon
    if denom == 0.0:
        return 1.0  # eps = 0 and the class is entirely absent on both sides
    return float((tp[i] + cfg.epsilon) / denom)


def _indices_from_counts(tp, fp, fn, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    numer = tp + cfg.epsilon
    denom = tp + cfg.alpha * fp + cfg.beta * fn + cfg.epsilon
    ti = np.where(denom > 0.0, numer / np.where(denom > 0.0, denom, 1.0), 1.0)
    return ti, denom


def loss_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray, cfg: LossConfig) -> float:
    """Focal Tversky loss from already-pooled counts (used for whole-set losses)."""
    ti, _ = _indices_from_counts(
        np.asarray(tp, dtype=np.float64),
        np.asarray(fp, dtype=np.float64),
        np.asarray(fn, dtype=np.float64),
        cfg,
    )
    return float(np.power(1.0 - ti, 1.0 / cfg.gamma).mean())


def focal_tversky_loss(
    probs: np.ndarray, target: np.ndarray, cfg: LossConfig, mask: np.ndarray | None = None
) -> float:
    tp, fp, fn = tversky_counts(probs, target, mask)
    return loss_from_counts(tp, fp, fn, cfg)


def focal_tversky_grad(
    probs: np.ndarray, target: np.ndarray, cfg: LossConfig, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Loss value and its analytic gradient w.r.t. the probabilities.

    Perfectly segmented classes (TI = 1) get a zero gradient: for gamma > 1
    the derivative of (1 - TI)^(1/gamma) is singular there, and zero is the
    correct subgradient at the loss minimum.
    """
    _check_pair(probs, target, mask)
    tp, fp, fn = tversky_counts(probs, target, mask)
    ti, denom = _indices_from_counts(tp, fp, fn, cfg)
    residual = 1.0 - ti
    loss = float(np.power(residual, 1.0 / cfg.gamma).mean())

    c = probs.shape[1]
    focal = np.zeros(c, dtype=np.float64)
    pos = residual > 0.0
    focal[pos] = (1.0 / (c * cfg.gamma)) * np.power(residual[pos], 1.0 / cfg.gamma - 1.0)
    # dL/dTI_i = -focal_i; chain into the pooled counts.
    numer = tp + cfg.epsilon
    d2 = denom * denom
    d_tp = np.where(pos, -focal * (denom - numer) / d2, 0.0)
    d_fp = np.where(pos, focal * numer * cfg.alpha / d2, 0.0)
    d_fn = np.where(pos, focal * numer * cfg.beta / d2, 0.0)

    g = target.astype(np.float64, copy=False)
    # dTP/dp = g, dFP/dp = 1 - g, dFN/dp = -g per pixel of the class plane.
    d_tp, d_fp, d_fn = (v[None, :, None, None] for v in (d_tp, d_fp, d_fn))
    dprobs = d_tp * g + d_fp * (1.0 - g) - d_fn * g
    if mask is not None:
        dprobs = dprobs * mask[:, None].astype(np.float64)
    return loss, dprobs.astype(probs.dtype)
