"""Glue between on-disk artifacts and the model: tile samples, prediction
mosaics, per-fold training for the hyperparameter search.

A sample is (input (C,T,T) float32, one-hot target (5,T,T) float32, valid
(T,T) bool). Pixels outside the grid, under a nodata mask, or missing from
either the composite or the reference mask are invalid and never reach the
loss or any metric.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .composite import Tile, extract_tile
from .errors import AlignmentError, DataError
from .grid import GeoGrid, grid_spec_matches
from .net import (
    LossConfig,
    ModelParams,
    TrainConfig,
    UNetConfig,
    init_params,
    train,
    unet_forward,
)
from .net.train import Sample, evaluate_tiles
from .refmask import N_CLASSES
from .tune import HyperParams


def _mask_window(mask: GeoGrid, tile: Tile) -> tuple[np.ndarray, np.ndarray]:
    w = tile.window
    codes = np.zeros((w.n_rows, w.n_cols), dtype=np.uint8)
    valid = np.zeros((w.n_rows, w.n_cols), dtype=bool)
    r1 = min(w.row0 + w.n_rows, mask.height)
    c1 = min(w.col0 + w.n_cols, mask.width)
    nr, nc = r1 - w.row0, c1 - w.col0
    if nr > 0 and nc > 0:
        codes[:nr, :nc] = mask.data[0, w.row0 : r1, w.col0 : c1]
        valid[:nr, :nc] = mask.valid_mask()[w.row0 : r1, w.col0 : c1]
    return codes, valid


def build_samples(
    composite: GeoGrid, mask: GeoGrid, tiles: Sequence[Tile], ids: Sequence[int]
) -> list[Sample]:
    """Training samples for the given tile ids, in the given order."""
    mismatch = grid_spec_matches(composite, mask)
    if mismatch is not None:
        raise AlignmentError(f"composite and mask grids differ in {mismatch}")
    if mask.dtype != "u8" or mask.channels != 1:
        raise DataError("reference mask must be a 1-channel u8 grid")
    by_id = {t.id: t for t in tiles}
    samples: list[Sample] = []
    for tid in ids:
        try:
            tile = by_id[tid]
        except KeyError:
            raise DataError(f"tile id {tid} not present in the tile set") from None
        x, x_valid = extract_tile(composite, tile)
        codes, m_valid = _mask_window(mask, tile)
        if codes.max(initial=0) >= N_CLASSES:
            raise DataError(f"tile {tid}: mask code {int(codes.max())} out of range")
        target = (codes[None] == np.arange(N_CLASSES, dtype=np.uint8)[:, None, None]).astype(np.float32)
        samples.append((x, target, x_valid & m_valid))
    return samples


def predict_mask(
    params: ModelParams,
    cfg: UNetConfig,
    composite: GeoGrid,
    tiles: Sequence[Tile] | None = None,
) -> GeoGrid:
    """Class-code mosaic over the composite grid.

    With tiles, each window is predicted separately and stitched (windows
    must be divisible by 2^depth). Without, the whole grid is padded up to
    the next multiple, predicted in one pass, and cropped back.
    """
    step = 2**cfg.depth
    h, w = composite.height, composite.width
    codes = np.zeros((h, w), dtype=np.uint8)
    if tiles is None:
        h2 = -(-h // step) * step
        w2 = -(-w // step) * step
        padded = np.zeros((composite.channels, h2, w2), dtype=np.float32)
        padded[:, :h, :w] = composite.data
        probs = unet_forward(params, cfg, padded[None], training=False)
        codes = probs[0].argmax(axis=0).astype(np.uint8)[:h, :w]
    else:
        for tile in tiles:
            win = tile.window
            if win.n_rows % step or win.n_cols % step:
                raise DataError(f"tile {tile.id} window not divisible by 2^depth = {step}")
            x, _ = extract_tile(composite, tile)
            probs = unet_forward(params, cfg, x[None], training=False)
            tile_codes = probs[0].argmax(axis=0).astype(np.uint8)
            r1 = min(win.row0 + win.n_rows, h)
            c1 = min(win.col0 + win.n_cols, w)
            codes[win.row0 : r1, win.col0 : c1] = tile_codes[: r1 - win.row0, : c1 - win.col0]
    nodata = None if composite.nodata_mask is None else composite.nodata_mask.copy()
    return GeoGrid(
        origin_x=composite.origin_x,
        origin_y=composite.origin_y,
        cell_size=composite.cell_size,
        width=w,
        height=h,
        channels=1,
        channel_names=("class",),
        dtype="u8",
        data=codes[None],
        nodata_mask=nodata,
    )


def subset_mask(shape: tuple[int, int], tiles: Sequence[Tile], ids: Sequence[int]) -> np.ndarray:
    """Boolean pixel mask covering the listed tiles' in-grid windows."""
    by_id = {t.id: t for t in tiles}
    out = np.zeros(shape, dtype=bool)
    for tid in ids:
        win = by_id[tid].window
        r1 = min(win.row0 + win.n_rows, shape[0])
        c1 = min(win.col0 + win.n_cols, shape[1])
        out[win.row0 : r1, win.col0 : c1] = True
    return out


def train_fold(
    composite: GeoGrid,
    mask: GeoGrid,
    tiles: Sequence[Tile],
    train_ids: Sequence[int],
    val_ids: Sequence[int],
    cfg: UNetConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    log_fn=None,
):
    """Init + train on one fold; returns (best params, history, val mMCC)."""
    train_samples = build_samples(composite, mask, tiles, train_ids)
    val_samples = build_samples(composite, mask, tiles, val_ids)
    params = init_params(cfg, train_cfg.seed)
    best, history = train(
        params, cfg, train_cfg, loss_cfg, train_samples, val_samples, log_fn=log_fn
    )
    _, val_mmcc = evaluate_tiles(best, cfg, loss_cfg, val_samples, train_cfg.batch_size)
    return best, history, val_mmcc


def make_fold_train_fn(
    composite: GeoGrid,
    mask: GeoGrid,
    tiles: Sequence[Tile],
    fold_plan,
    depth: int,
    max_epochs: int,
    patience: int,
):
    """Adapter giving the hyperparameter search a per-fold trainer."""

    def train_fn(hp: HyperParams, fold: int, rng: np.random.Generator) -> float:
        plan_fold = fold_plan.folds[fold]
        cfg = UNetConfig(
            in_channels=composite.channels,
            n_classes=N_CLASSES,
            base_filters=hp.base_filters,
            kernel_size=hp.kernel_size,
            depth=depth,
            dropout=hp.dropout,
        )
        train_cfg = TrainConfig(
            learning_rate=hp.learning_rate,
            batch_size=hp.batch_size,
            max_epochs=max_epochs,
            patience=patience,
            seed=int(rng.integers(2**31)),
        )
        loss_cfg = LossConfig(alpha=hp.alpha, gamma=hp.gamma)
        _, _, val_mmcc = train_fold(
            composite, mask, tiles, plan_fold.train_tiles, plan_fold.val_tiles, cfg, train_cfg, loss_cfg
        )
        return val_mmcc

    return train_fn
