"""Composite stacking, tiling, municipality assignment, and the CV fold plan.

The study grid is cut into a lattice of square tiles; a fixed systematic
pattern marks 2x2 tile clusters as validation (4 tiles per val_period^2
block, 16% for the default period of 5). Each cross-validation fold holds
out every tile of one municipality as the test set and splits the rest
between training and validation by that pattern.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, box

from .errors import AlignmentError, DataError
from .grid import GeoGrid, GridWindow, grid_spec_matches
from .pointcloud import GridSpec, spec_of

COMBOS = ("RGBI-ALS", "RGBI-DAP", "RGBI-DAP-DTM")


@dataclass(eq=False)
class Composite:
    """Model-input raster: R, G, B, NIR, CHM and optionally DTM, all in [0, 1]."""

    grid: GeoGrid
    combo: str

    def __post_init__(self):
        if self.combo not in COMBOS:
            raise ValueError(f"combo must be one of {COMBOS}, got {self.combo!r}")
        want = 6 if self.combo == "RGBI-DAP-DTM" else 5
        if self.grid.channels != want:
            raise DataError(f"{self.combo} composite needs {want} channels, got {self.grid.channels}")
        data = self.grid.data
        if data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise DataError("composite values must lie in [0, 1]; scale channels first")


def scale_channel(grid: GeoGrid, kind: str, dtm_max: float = 375.0) -> GeoGrid:
    """Rescale raw channel values to [0, 1] by their fixed physical range.

    spectral: v / 255; chm: clamp(v, 0, 50) / 50; dtm: clamp(v, 0, dtm_max) / dtm_max.
    """
    if kind == "spectral":
        values = grid.data.astype(np.float64) / 255.0
    elif kind == "chm":
        values = np.clip(grid.data.astype(np.float64), 0.0, 50.0) / 50.0
    elif kind == "dtm":
        if dtm_max <= 0:
            raise ValueError(f"dtm_max must be > 0, got {dtm_max}")
        values = np.clip(grid.data.astype(np.float64), 0.0, dtm_max) / dtm_max
    else:
        raise ValueError(f"kind must be spectral, chm or dtm, got {kind!r}")
    return GeoGrid(
        origin_x=grid.origin_x,
        origin_y=grid.origin_y,
        cell_size=grid.cell_size,
        width=grid.width,
        height=grid.height,
        channels=grid.channels,
        channel_names=grid.channel_names,
        dtype="f32",
        data=values.astype(np.float32),
        nodata_mask=None if grid.nodata_mask is None else grid.nodata_mask.copy(),
    )


def stack(
    spectral: GeoGrid,
    chm: GeoGrid,
    dtm: GeoGrid | None = None,
    chm_source: str = "als",
) -> Composite:
    """Stack scaled channels into a composite in fixed R,G,B,NIR,CHM[,DTM] order."""
    if spectral.channels != 4:
        raise DataError(f"spectral input needs 4 channels, got {spectral.channels}")
    if chm.channels != 1:
        raise DataError(f"CHM input needs 1 channel, got {chm.channels}")
    for name, other in (("chm", chm),) + ((("dtm", dtm),) if dtm is not None else ()):
        mismatch = grid_spec_matches(spectral, other)
        if mismatch is not None:
            raise AlignmentError(f"{name} grid differs from spectral grid in {mismatch}")
    if chm_source not in ("als", "dap"):
        raise ValueError(f"chm_source must be 'als' or 'dap', got {chm_source!r}")
    if dtm is None:
        combo = "RGBI-ALS" if chm_source == "als" else "RGBI-DAP"
        planes = np.concatenate([spectral.data, chm.data], axis=0)
        names = ("r", "g", "b", "nir", "chm")
    else:
        if dtm.channels != 1:
            raise DataError(f"DTM input needs 1 channel, got {dtm.channels}")
        if chm_source != "dap":
            raise ValueError("the DTM combo is defined for the DAP-derived CHM")
        combo = "RGBI-DAP-DTM"
        planes = np.concatenate([spectral.data, chm.data, dtm.data], axis=0)
        names = ("r", "g", "b", "nir", "chm", "dtm")
    masks = [g.nodata_mask for g in (spectral, chm, dtm) if g is not None and g.nodata_mask is not None]
    nodata = None
    if masks:
        nodata = masks[0].copy()
        for m in masks[1:]:
            nodata |= m
    grid = GeoGrid(
        origin_x=spectral.origin_x,
        origin_y=spectral.origin_y,
        cell_size=spectral.cell_size,
        width=spectral.width,
        height=spectral.height,
        channels=len(names),
        channel_names=names,
        dtype="f32",
        data=planes,
        nodata_mask=nodata,
    )
    return Composite(grid, combo)


# -- tiling ---------------------------------------------------------------------


@dataclass(eq=False)
class Tile:
    """One lattice tile; id is the row-major lattice index."""

    id: int
    lattice_row: int
    lattice_col: int
    window: GridWindow  # may extend past the grid; extraction pads with nodata
    coverage: float
    municipality: int | None = None
    split: str | None = None  # "train" or "validation", set by the fold planner


def make_tiles(spec: GridSpec, tile_px: int = 512, min_coverage: float = 0.0) -> list[Tile]:
    """Lay a tile lattice over the grid, anchored at its origin.

    Edge tiles keep full-size windows (extraction pads the out-of-grid part
    with nodata); tiles whose in-grid fraction is below min_coverage are
    dropped. Ids are row-major lattice indices and stay stable under drops.
    """
    if tile_px < 1:
        raise ValueError(f"tile_px must be >= 1, got {tile_px}")
    n_rows = math.ceil(spec.height / tile_px)
    n_cols = math.ceil(spec.width / tile_px)
    tiles = []
    for tr in range(n_rows):
        for tc in range(n_cols):
            r0, c0 = tr * tile_px, tc * tile_px
            in_rows = min(tile_px, spec.height - r0)
            in_cols = min(tile_px, spec.width - c0)
            coverage = (in_rows * in_cols) / (tile_px * tile_px)
            if coverage < min_coverage:
                continue
            tiles.append(
                Tile(
                    id=tr * n_cols + tc,
                    lattice_row=tr,
                    lattice_col=tc,
                    window=GridWindow(r0, c0, tile_px, tile_px),
                    coverage=coverage,
                )
            )
    return tiles


def extract_tile(grid: GeoGrid, tile: Tile) -> tuple[np.ndarray, np.ndarray]:
    """(C, T, T) float32 values and (T, T) valid mask; out-of-grid pixels padded."""
    w = tile.window
    out = np.zeros((grid.channels, w.n_rows, w.n_cols), dtype=np.float32)
    valid = np.zeros((w.n_rows, w.n_cols), dtype=bool)
    r1 = min(w.row0 + w.n_rows, grid.height)
    c1 = min(w.col0 + w.n_cols, grid.width)
    nr, nc = r1 - w.row0, c1 - w.col0
    if nr > 0 and nc > 0:
        out[:, :nr, :nc] = grid.data[:, w.row0 : r1, w.col0 : c1]
        valid[:nr, :nc] = grid.valid_mask()[w.row0 : r1, w.col0 : c1]
    return out, valid


# -- municipalities ----------------------------------------------------------------


@dataclass(eq=False)
class Municipality:
    id: int
    exterior: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    def shapely(self) -> Polygon:
        return Polygon(self.exterior, [h for h in self.holes])


def assign_municipality(tile: Tile, municipalities: list[Municipality], spec: GridSpec) -> int:
    """Id of the municipality covering the largest share of the tile square."""
    w = tile.window
    x0 = spec.origin_x + w.col0 * spec.cell_size
    x1 = x0 + w.n_cols * spec.cell_size
    y1 = spec.origin_y - w.row0 * spec.cell_size
    y0 = y1 - w.n_rows * spec.cell_size
    square = box(x0, y0, x1, y1)
    best_id = None
    best_area = 0.0
    for muni in municipalities:
        area = square.intersection(muni.shapely()).area
        if area > best_area or (area == best_area and area > 0 and (best_id is None or muni.id < best_id)):
            best_area = area
            best_id = muni.id
    if best_id is None:
        raise DataError(f"tile {tile.id} overlaps no municipality")
    return best_id


def assign_municipalities(tiles: list[Tile], municipalities: list[Municipality], spec: GridSpec) -> None:
    for tile in tiles:
        tile.municipality = assign_municipality(tile, municipalities, spec)


def municipalities_to_json(municipalities: list[Municipality]) -> dict:
    return {
        "municipalities": [
            {"id": m.id, "exterior": m.exterior.tolist(), "holes": [h.tolist() for h in m.holes]}
            for m in municipalities
        ]
    }


def municipalities_from_json(doc: dict) -> list[Municipality]:
    try:
        records = doc["municipalities"]
    except (KeyError, TypeError):
        raise DataError("municipality JSON must contain a 'municipalities' list") from None
    return [
        Municipality(
            id=int(rec["id"]),
            exterior=np.asarray(rec["exterior"], dtype=np.float64),
            holes=[np.asarray(h, dtype=np.float64) for h in rec.get("holes", [])],
        )
        for rec in records
    ]


# -- fold planning ---------------------------------------------------------------


@dataclass(eq=False)
class Fold:
    test_municipality: int
    train_tiles: list[int]
    val_tiles: list[int]
    test_tiles: list[int]


@dataclass(eq=False)
class FoldPlan:
    folds: list[Fold]


def is_validation_tile(tile: Tile, val_period: int = 5, val_offset: tuple[int, int] = (0, 0)) -> bool:
    """True for tiles inside the systematic 2x2 validation cluster of their block."""
    dr = (tile.lattice_row - val_offset[0]) % val_period
    dc = (tile.lattice_col - val_offset[1]) % val_period
    return dr < 2 and dc < 2


def plan_folds(
    tiles: list[Tile], val_period: int = 5, val_offset: tuple[int, int] = (0, 0)
) -> FoldPlan:
    """One fold per municipality: its tiles are the test set; the remaining
    tiles split into train/validation by the fixed global cluster pattern."""
    if val_period < 2:
        raise ValueError(f"val_period must be >= 2, got {val_period}")
    if any(t.municipality is None for t in tiles):
        raise DataError("every tile needs a municipality before fold planning")
    for tile in tiles:
        tile.split = "validation" if is_validation_tile(tile, val_period, val_offset) else "train"
    munis = sorted({t.municipality for t in tiles})
    if len(munis) < 2:
        raise DataError(f"fold planning needs >= 2 municipalities, got {len(munis)}")
    folds = []
    for muni in munis:
        test = [t.id for t in tiles if t.municipality == muni]
        train = [t.id for t in tiles if t.municipality != muni and t.split == "train"]
        val = [t.id for t in tiles if t.municipality != muni and t.split == "validation"]
        folds.append(Fold(test_municipality=muni, train_tiles=train, val_tiles=val, test_tiles=test))
    return FoldPlan(folds)


def fold_plan_to_json(plan: FoldPlan) -> dict:
    return {
        "folds": [
            {
                "test_municipality": f.test_municipality,
                "train": list(f.train_tiles),
                "val": list(f.val_tiles),
                "test": list(f.test_tiles),
            }
            for f in plan.folds
        ]
    }


def fold_plan_from_json(doc: dict) -> FoldPlan:
    try:
        records = doc["folds"]
    except (KeyError, TypeError):
        raise DataError("fold plan JSON must contain a 'folds' list") from None
    return FoldPlan(
        folds=[
            Fold(
                test_municipality=int(rec["test_municipality"]),
                train_tiles=[int(i) for i in rec["train"]],
                val_tiles=[int(i) for i in rec["val"]],
                test_tiles=[int(i) for i in rec["test"]],
            )
            for rec in records
        ]
    )


def tiles_to_json(tiles: list[Tile], spec: GridSpec, tile_px: int) -> dict:
    return {
        "grid": {
            "origin_x": spec.origin_x,
            "origin_y": spec.origin_y,
            "cell_size": spec.cell_size,
            "width": spec.width,
            "height": spec.height,
        },
        "tile_px": tile_px,
        "tiles": [
            {
                "id": t.id,
                "row": t.lattice_row,
                "col": t.lattice_col,
                "window": [t.window.row0, t.window.col0, t.window.n_rows, t.window.n_cols],
                "coverage": t.coverage,
                "municipality": t.municipality,
            }
            for t in tiles
        ],
    }


def tiles_from_json(doc: dict) -> tuple[list[Tile], GridSpec, int]:
    g = doc["grid"]
    spec = GridSpec(
        origin_x=g["origin_x"],
        origin_y=g["origin_y"],
        width=g["width"],
        height=g["height"],
        cell_size=g["cell_size"],
    )
    tiles = [
        Tile(
            id=int(rec["id"]),
            lattice_row=int(rec["row"]),
            lattice_col=int(rec["col"]),
            window=GridWindow(*[int(v) for v in rec["window"]]),
            coverage=float(rec["coverage"]),
            municipality=None if rec.get("municipality") is None else int(rec["municipality"]),
        )
        for rec in doc["tiles"]
    ]
    return tiles, spec, int(doc["tile_px"])
