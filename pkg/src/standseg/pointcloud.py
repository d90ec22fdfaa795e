"""Point clouds and every point-to-raster product.

Covers CSV ingestion, height normalization against ground points (k-NN
inverse distance weighting), the max-height canopy rasterizer with
sub-circle point replication, TIN terrain interpolation, and per-cell
spectral averaging with iterative gap filling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from io import StringIO

import numpy as np
import pandas as pd
from scipy.spatial import Delaunay, cKDTree
from scipy.spatial import QhullError

from .errors import DataError, FormatError, GeometryError, ParseError
from .grid import GeoGrid

log = logging.getLogger(__name__)

GROUND_CLASS = 2

# A neighbor closer than this is treated as horizontally coincident and its
# elevation is used directly instead of the IDW estimate.
COINCIDENT_DIST = 1e-9

_BASE_COLUMNS = ["x", "y", "z", "class"]
_SPECTRAL_COLUMNS = ["r", "g", "b", "nir"]


@dataclass(eq=False)
class GridSpec:
    """Target raster geometry for point-to-raster operations."""

    origin_x: float
    origin_y: float
    width: int
    height: int
    cell_size: float = 1.0

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    def cell_of(self, x, y):
        """(row, col) arrays of the cells containing the given map points."""
        col = np.floor((np.asarray(x) - self.origin_x) / self.cell_size).astype(np.int64)
        row = np.floor((self.origin_y - np.asarray(y)) / self.cell_size).astype(np.int64)
        return row, col

    def cell_centers(self):
        """(H, W) arrays of cell-center x and y coordinates."""
        cols = np.arange(self.width)
        rows = np.arange(self.height)
        x = self.origin_x + (cols + 0.5) * self.cell_size
        y = self.origin_y - (rows + 0.5) * self.cell_size
        return np.broadcast_to(x, (self.height, self.width)), np.broadcast_to(
            y[:, None], (self.height, self.width)
        )

    def make_grid(self, data, channel_names, dtype="f32", nodata_mask=None) -> GeoGrid:
        data = np.asarray(data)
        channels = 1 if data.ndim == 2 else data.shape[0]
        return GeoGrid(
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            cell_size=self.cell_size,
            width=self.width,
            height=self.height,
            channels=channels,
            channel_names=tuple(channel_names),
            dtype=dtype,
            data=data,
            nodata_mask=nodata_mask,
        )


def spec_of(grid: GeoGrid) -> GridSpec:
    return GridSpec(
        origin_x=grid.origin_x,
        origin_y=grid.origin_y,
        width=grid.width,
        height=grid.height,
        cell_size=grid.cell_size,
    )


@dataclass(eq=False)
class PointCloud:
    """Columnar point storage; spectral bands are either all present or absent."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    cls: np.ndarray
    r: np.ndarray | None = None
    g: np.ndarray | None = None
    b: np.ndarray | None = None
    nir: np.ndarray | None = None
    normalized: bool = field(default=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.cls = np.asarray(self.cls, dtype=np.int32)
        n = len(self.x)
        if not (len(self.y) == len(self.z) == len(self.cls) == n):
            raise ValueError("coordinate columns have mismatched lengths")
        spectral = [self.r, self.g, self.b, self.nir]
        present = [s is not None for s in spectral]
        if any(present) and not all(present):
            raise ValueError("spectral bands must be all present or all absent")
        if all(present):
            self.r, self.g, self.b, self.nir = (
                np.asarray(s, dtype=np.float64) for s in spectral
            )
            for name, band in zip(_SPECTRAL_COLUMNS, (self.r, self.g, self.b, self.nir)):
                if len(band) != n:
                    raise ValueError(f"spectral column {name} has mismatched length")
                if n and (band.min() < 0 or band.max() > 255):
                    raise ValueError(f"spectral column {name} outside [0, 255]")
        if n and not (
            np.isfinite(self.x).all() and np.isfinite(self.y).all() and np.isfinite(self.z).all()
        ):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def has_spectral(self) -> bool:
        return self.r is not None

    def ground(self) -> np.ndarray:
        """Boolean selector of ground-classified points."""
        return self.cls == GROUND_CLASS


# -- CSV interchange ----------------------------------------------------------


def read_points(source, fmt: str = "csv") -> PointCloud:
    """Parse the point CSV ("x,y,z,class" with optional ",r,g,b,nir")."""
    if fmt != "csv":
        raise ValueError(f"unsupported point format {fmt!r}")
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty point file")
    header = [c.strip() for c in lines[0].split(",")]
    if header == _BASE_COLUMNS:
        spectral = False
    elif header == _BASE_COLUMNS + _SPECTRAL_COLUMNS:
        spectral = True
    else:
        raise FormatError(
            f"unexpected header {','.join(header)!r}; expected "
            f"{','.join(_BASE_COLUMNS)!r} or {','.join(_BASE_COLUMNS + _SPECTRAL_COLUMNS)!r}"
        )
    ncols = len(header)
    body = "\n".join(lines[1:])
    if not body.strip():
        empty = np.empty(0)
        bands = {c: empty for c in _SPECTRAL_COLUMNS} if spectral else {}
        return PointCloud(x=empty, y=empty, z=empty, cls=np.empty(0, dtype=np.int32), **bands)
    try:
        frame = pd.read_csv(
            StringIO(body),
            header=None,
            names=header,
            dtype=np.float64,
            na_filter=False,
        )
    except (ValueError, pd.errors.ParserError):
        _locate_bad_row(lines[1:], ncols)
        raise  # unreachable: _locate_bad_row always raises
    if frame.shape[1] != ncols or frame.isna().to_numpy().any():
        _locate_bad_row(lines[1:], ncols)
    cls = frame["class"].to_numpy()
    if not np.array_equal(cls, np.round(cls)):
        bad = int(np.nonzero(cls != np.round(cls))[0][0])
        raise ParseError(f"non-integer class value {cls[bad]!r}", line=bad + 2)
    bands = {c: frame[c].to_numpy() for c in _SPECTRAL_COLUMNS} if spectral else {}
    return PointCloud(
        x=frame["x"].to_numpy(),
        y=frame["y"].to_numpy(),
        z=frame["z"].to_numpy(),
        cls=cls.astype(np.int32),
        **bands,
    )


def _locate_bad_row(rows: list[str], ncols: int):
    """Slow path: pin the first malformed row to a 1-based file line."""
    for i, row in enumerate(rows):
        if not row.strip():
            continue
        parts = row.split(",")
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} fields, got {len(parts)}", line=i + 2)
        for part in parts:
            try:
                float(part)
            except ValueError:
                raise ParseError(f"not a number: {part.strip()!r}", line=i + 2) from None
    raise ParseError("malformed row", line=None)


def write_points(cloud: PointCloud, sink) -> None:
    """Emit the point CSV; spectral bands are written as integers."""
    columns = {"x": cloud.x, "y": cloud.y, "z": cloud.z, "class": cloud.cls}
    if cloud.has_spectral:
        for name, band in zip(_SPECTRAL_COLUMNS, (cloud.r, cloud.g, cloud.b, cloud.nir)):
            columns[name] = np.round(band).astype(np.int64)
    frame = pd.DataFrame(columns)
    text = frame.to_csv(index=False, lineterminator="\n")
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)


# -- height normalization -----------------------------------------------------


def normalize_heights(
    cloud: PointCloud,
    k: int = 10,
    power: float = 2.0,
    ground_source: PointCloud | None = None,
) -> PointCloud:
    """Subtract the IDW-interpolated ground elevation under every point.

    The ground surface is taken from `ground_source` when given (e.g. a
    photogrammetric cloud normalized against lidar ground points), otherwise
    from the cloud's own ground-classified points. For each point, the k
    nearest ground points in 2-D are weighted by d^(-power); a ground point
    at (numerically) zero distance short-circuits to its elevation.
    """
    if cloud.normalized:
        raise DataError("cloud is already height-normalized")
    source = ground_source if ground_source is not None else cloud
    sel = source.ground()
    n_ground = int(sel.sum())
    if n_ground == 0:
        raise DataError("no ground points available for normalization")
    gx, gy, gz = source.x[sel], source.y[sel], source.z[sel]
    tree = cKDTree(np.column_stack([gx, gy]))
    kq = min(k, n_ground)
    dist, idx = tree.query(np.column_stack([cloud.x, cloud.y]), k=kq)
    if kq == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    elev = gz[idx]
    coincident = dist[:, 0] < COINCIDENT_DIST
    with np.errstate(divide="ignore"):
        w = dist ** (-power)
    w[~np.isfinite(w)] = 0.0
    wsum = w.sum(axis=1)
    # guard rows where every finite weight vanished (all neighbors coincident)
    safe = wsum > 0
    ground_elev = np.empty(len(cloud), dtype=np.float64)
    ground_elev[safe] = (w[safe] * elev[safe]).sum(axis=1) / wsum[safe]
    ground_elev[~safe] = elev[~safe, 0]
    ground_elev[coincident] = elev[coincident, 0]
    return replace(cloud, z=cloud.z - ground_elev, normalized=True)


# -- canopy height rasterization ------------------------------------------------

_SUBCIRCLE_ANGLES = np.deg2rad(np.arange(0, 360, 45))


def rasterize_canopy_p2r(
    cloud: PointCloud, spec: GridSpec, subcircle_radius: float = 0.15
) -> GeoGrid:
    """Max-height point-to-raster with sub-circle replication.

    Each point is replicated at its own position plus eight positions on a
    circle of `subcircle_radius` (every 45 degrees), all at the point's
    height; a cell takes the maximum over replicas landing in it. Cells hit
    by no replica are flagged nodata.
    """
    if not cloud.normalized:
        raise DataError("canopy rasterization expects a height-normalized cloud")
    heights = np.full((spec.height, spec.width), -np.inf, dtype=np.float64)
    if len(cloud):
        dx = np.concatenate([[0.0], subcircle_radius * np.cos(_SUBCIRCLE_ANGLES)])
        dy = np.concatenate([[0.0], subcircle_radius * np.sin(_SUBCIRCLE_ANGLES)])
        px = cloud.x[:, None] + dx[None, :]
        py = cloud.y[:, None] + dy[None, :]
        pz = np.broadcast_to(cloud.z[:, None], px.shape)
        row, col = spec.cell_of(px.ravel(), py.ravel())
        keep = (row >= 0) & (row < spec.height) & (col >= 0) & (col < spec.width)
        np.maximum.at(heights, (row[keep], col[keep]), pz.ravel()[keep])
    nodata = ~np.isfinite(heights)
    heights[nodata] = 0.0
    return spec.make_grid(heights.astype(np.float32), ("chm",), nodata_mask=nodata)


def finalize_height_grid(grid: GeoGrid, cap: float = 50.0) -> GeoGrid:
    """Zero out nodata and negatives, cap, and rescale heights to [0, 1]."""
    if cap <= 0:
        raise ValueError(f"cap must be > 0, got {cap}")
    if grid.channels != 1:
        raise ValueError(f"expected a 1-channel height grid, got {grid.channels} channels")
    values = grid.data[0].astype(np.float64)
    if grid.nodata_mask is not None:
        values[grid.nodata_mask] = 0.0
    values = np.clip(values, 0.0, cap) / cap
    return GeoGrid(
        origin_x=grid.origin_x,
        origin_y=grid.origin_y,
        cell_size=grid.cell_size,
        width=grid.width,
        height=grid.height,
        channels=1,
        channel_names=grid.channel_names,
        dtype="f32",
        data=values.astype(np.float32),
        nodata_mask=None,
    )


# -- terrain rasterization ------------------------------------------------------


def rasterize_terrain_tin(cloud: PointCloud, spec: GridSpec) -> GeoGrid:
    """Linear TIN interpolation of ground elevations at cell centers.

    Cell centers inside the convex hull of the ground points get barycentric
    interpolation within their Delaunay triangle; centers outside take the
    elevation of the nearest ground point. Negative results are floored at 0.
    """
    if cloud.normalized:
        raise DataError("terrain rasterization expects raw elevations, not normalized heights")
    sel = cloud.ground()
    gx, gy, gz = cloud.x[sel], cloud.y[sel], cloud.z[sel]
    xy, keep = np.unique(np.column_stack([gx, gy]), axis=0, return_index=True)
    gz = gz[keep]
    if len(xy) < 3:
        raise GeometryError(f"TIN needs >= 3 distinct ground points, got {len(xy)}")
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise GeometryError(f"degenerate ground points (collinear?): {exc}") from exc

    cx, cy = spec.cell_centers()
    pts = np.column_stack([cx.ravel(), cy.ravel()])
    simplex = tri.find_simplex(pts)
    values = np.empty(len(pts), dtype=np.float64)

    inside = simplex >= 0
    if inside.any():
        trans = tri.transform[simplex[inside]]  # (n, 3, 2): affine to barycentric
        delta = pts[inside] - trans[:, 2]
        bary2 = np.einsum("nij,nj->ni", trans[:, :2], delta)
        bary = np.concatenate([bary2, 1.0 - bary2.sum(axis=1, keepdims=True)], axis=1)
        corners = tri.simplices[simplex[inside]]
        values[inside] = (bary * gz[corners]).sum(axis=1)
    if (~inside).any():
        tree = cKDTree(xy)
        _, nearest = tree.query(pts[~inside], k=1)
        values[~inside] = gz[nearest]

    values = np.maximum(values, 0.0).reshape(spec.height, spec.width)
    # absolute elevations: f32 loses ~0.5 m at UTM-scale coordinates
    return spec.make_grid(values, ("dtm",), dtype="f64")


# -- spectral rasterization -------------------------------------------------------


def rasterize_spectral(cloud: PointCloud, spec: GridSpec, fill_kernel: int = 3) -> GeoGrid:
    """Per-cell mean of the four spectral bands, with iterative gap filling.

    Means are accumulated in a canonical sort order so the result is exactly
    invariant to the input point order. Empty cells are filled by the mean of
    their non-empty 3x3 neighbors, pass after pass, until nothing changes;
    cells no pass can reach become 0.
    """
    if not cloud.has_spectral:
        raise DataError("cloud carries no spectral bands")
    if fill_kernel != 3:
        raise ValueError("only a 3x3 fill kernel is supported")
    h, w = spec.height, spec.width
    sums = np.zeros((4, h, w), dtype=np.float64)
    counts = np.zeros((h, w), dtype=np.int64)
    if len(cloud):
        row, col = spec.cell_of(cloud.x, cloud.y)
        keep = (row >= 0) & (row < h) & (col >= 0) & (col < w)
        bands = np.stack([cloud.r, cloud.g, cloud.b, cloud.nir])[:, keep]
        cell = row[keep] * w + col[keep]
        # canonical accumulation order: by cell, then by full point record
        order = np.lexsort((bands[3], bands[2], bands[1], bands[0], cell))
        cell = cell[order]
        bands = bands[:, order]
        flat = sums.reshape(4, h * w)
        for b in range(4):
            np.add.at(flat[b], cell, bands[b])
        np.add.at(counts.reshape(-1), cell, 1)
    filled = counts > 0
    values = np.zeros((4, h, w), dtype=np.float64)
    values[:, filled] = sums[:, filled] / counts[filled]

    while not filled.all():
        neigh_sum = _box3(values * filled[None, :, :])
        neigh_cnt = _box3(filled.astype(np.float64))
        can_fill = ~filled & (neigh_cnt > 0)
        if not can_fill.any():
            break  # disconnected empties stay 0
        values[:, can_fill] = neigh_sum[:, can_fill] / neigh_cnt[can_fill]
        filled = filled | can_fill
    return spec.make_grid(values.astype(np.float32), ("r", "g", "b", "nir"))


def _box3(a: np.ndarray) -> np.ndarray:
    """Sum over the 3x3 neighborhood (zero padding), excluding nothing."""
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(a, pad)
    out = np.zeros_like(a)
    for di in range(3):
        for dj in range(3):
            out += p[..., di : di + a.shape[-2], dj : dj + a.shape[-1]]
    return out
