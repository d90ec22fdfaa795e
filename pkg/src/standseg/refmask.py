"""Expert stand map to per-pixel class masks and one-hot training targets.

Development classes NF, I, II, III, IV, V collapse to five mask codes
(I and II merge: the distinction is not observable in remote sensing data):

    0 = NF   1 = I-II   2 = III   3 = IV   4 = V

A cell takes the class of the polygon containing its center under the
even-odd rule (holes subtract). Cells covered by no polygon fall back to NF.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GeometryError
from .grid import GeoGrid
from .pointcloud import GridSpec

log = logging.getLogger(__name__)

N_CLASSES = 5

CLASS_CODES = {"NF": 0, "I": 1, "II": 1, "I-II": 1, "III": 2, "IV": 3, "V": 4}
CODE_NAMES = {0: "NF", 1: "I-II", 2: "III", 3: "IV", 4: "V"}


@dataclass(eq=False)
class StandPolygon:
    """One stand: a closed exterior ring, optional hole rings, and a class."""

    stand_id: int
    dev_class: str
    exterior: np.ndarray  # (n, 2), first vertex == last
    holes: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.dev_class not in CLASS_CODES:
            raise DataError(f"stand {self.stand_id}: unknown class {self.dev_class!r}")
        self.exterior = _check_ring(np.asarray(self.exterior, dtype=np.float64), self.stand_id)
        self.holes = [_check_ring(np.asarray(h, dtype=np.float64), self.stand_id) for h in self.holes]

    @property
    def code(self) -> int:
        return CLASS_CODES[self.dev_class]

    def rings(self):
        yield self.exterior
        yield from self.holes


def _check_ring(ring: np.ndarray, stand_id: int) -> np.ndarray:
    if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 4:
        raise GeometryError(f"stand {stand_id}: ring needs >= 3 vertices plus closure")
    if not np.array_equal(ring[0], ring[-1]):
        raise GeometryError(f"stand {stand_id}: ring is not closed (first vertex != last)")
    _check_simple(ring, stand_id)
    return ring


def _cross(ux, uy, vx, vy):
    return ux * vy - uy * vx


def _check_simple(ring: np.ndarray, stand_id: int):
    """Pairwise proper-intersection test between non-adjacent segments."""
    a = ring[:-1]
    b = ring[1:]
    n = len(a)
    for i in range(n - 2):
        j0 = i + 2
        j1 = n - 1 if i == 0 else n  # closing segment is adjacent to segment 0
        if j0 >= j1:
            continue
        p1, p2 = a[i], b[i]
        q1, q2 = a[j0:j1], b[j0:j1]
        d1 = np.sign(_cross(q2[:, 0] - q1[:, 0], q2[:, 1] - q1[:, 1], p1[0] - q1[:, 0], p1[1] - q1[:, 1]))
        d2 = np.sign(_cross(q2[:, 0] - q1[:, 0], q2[:, 1] - q1[:, 1], p2[0] - q1[:, 0], p2[1] - q1[:, 1]))
        d3 = np.sign(_cross(p2[0] - p1[0], p2[1] - p1[1], q1[:, 0] - p1[0], q1[:, 1] - p1[1]))
        d4 = np.sign(_cross(p2[0] - p1[0], p2[1] - p1[1], q2[:, 0] - p1[0], q2[:, 1] - p1[1]))
        bad = (d1 * d2 < 0) & (d3 * d4 < 0)
        if bad.any():
            j = j0 + int(np.argmax(bad))
            raise GeometryError(f"stand {stand_id}: ring self-intersects (segments {i} and {j})")


@dataclass(eq=False)
class ClassMask:
    """Single-channel u8 grid of mask codes 0..4."""

    grid: GeoGrid

    def __post_init__(self):
        if self.grid.dtype != "u8" or self.grid.channels != 1:
            raise DataError("class mask must be a 1-channel u8 grid")
        if self.grid.data.max(initial=0) >= N_CLASSES:
            raise DataError(f"class mask contains codes >= {N_CLASSES}")

    @property
    def values(self) -> np.ndarray:
        return self.grid.data[0]


@dataclass(eq=False)
class OneHot:
    """Five binary u8 planes in code order; exactly one plane set per pixel."""

    grid: GeoGrid

    def __post_init__(self):
        if self.grid.dtype != "u8" or self.grid.channels != N_CLASSES:
            raise DataError(f"one-hot grid must have {N_CLASSES} u8 channels")

    @property
    def planes(self) -> np.ndarray:
        return self.grid.data


def rasterize_stands(stands: list[StandPolygon], spec: GridSpec) -> ClassMask:
    """Assign every cell center its covering stand's class code.

    Deterministic tie rules: a center exactly on a ring edge belongs to the
    first-listed stand owning that edge; a center strictly inside several
    stands goes to the last-listed one (overlaps are logged, the stand map
    is supposed to be a partition).
    """
    cx, cy = spec.cell_centers()
    px = cx.ravel()
    py = cy.ravel()
    n = px.size

    codes = np.zeros(n, dtype=np.uint8)
    owner = np.full(n, -1, dtype=np.int64)  # last stand covering each center
    edge_owner = np.full(n, -1, dtype=np.int64)  # first stand whose edge hits it
    n_cover = np.zeros(n, dtype=np.int32)

    for si, stand in enumerate(stands):
        inside = np.zeros(n, dtype=bool)
        on_edge = np.zeros(n, dtype=bool)
        for ring in stand.rings():
            inside ^= _even_odd(ring, px, py)
            on_edge |= _on_ring_edge(ring, px, py)
        n_cover += inside
        owner[inside] = si
        first = on_edge & (edge_owner < 0)
        edge_owner[first] = si

    overlaps = int((n_cover >= 2).sum())
    if overlaps:
        log.warning("%d cell centers covered by more than one stand; last-listed wins", overlaps)

    has_owner = owner >= 0
    codes[has_owner] = np.array([s.code for s in stands], dtype=np.uint8)[owner[has_owner]]
    has_edge = edge_owner >= 0
    codes[has_edge] = np.array([s.code for s in stands], dtype=np.uint8)[edge_owner[has_edge]]

    grid = spec.make_grid(codes.reshape(spec.height, spec.width), ("class",), dtype="u8")
    return ClassMask(grid)


def _even_odd(ring: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Vectorized even-odd crossing test against one ring (closure implied)."""
    inside = np.zeros(px.shape, dtype=bool)
    x1, y1 = ring[:-1, 0], ring[:-1, 1]
    x2, y2 = ring[1:, 0], ring[1:, 1]
    for i in range(len(x1)):
        crosses = (y1[i] > py) != (y2[i] > py)
        if not crosses.any():
            continue
        xt = x1[i] + (py - y1[i]) * (x2[i] - x1[i]) / (y2[i] - y1[i])
        inside ^= crosses & (px < xt)
    return inside


def _on_ring_edge(ring: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Exact test for centers lying on a ring segment."""
    on = np.zeros(px.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        cross = (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)
        lo_x, hi_x = min(x1, x2), max(x1, x2)
        lo_y, hi_y = min(y1, y2), max(y1, y2)
        on |= (cross == 0.0) & (px >= lo_x) & (px <= hi_x) & (py >= lo_y) & (py <= hi_y)
    return on


def one_hot(mask: ClassMask) -> OneHot:
    """Expand mask codes into five binary planes (plane k = 1 where mask = k)."""
    values = mask.values
    if values.max(initial=0) >= N_CLASSES:
        raise DataError(f"mask code {int(values.max())} out of range")
    planes = (values[None, :, :] == np.arange(N_CLASSES)[:, None, None]).astype(np.uint8)
    grid = GeoGrid(
        origin_x=mask.grid.origin_x,
        origin_y=mask.grid.origin_y,
        cell_size=mask.grid.cell_size,
        width=mask.grid.width,
        height=mask.grid.height,
        channels=N_CLASSES,
        channel_names=tuple(CODE_NAMES[k] for k in range(N_CLASSES)),
        dtype="u8",
        data=planes,
        nodata_mask=None if mask.grid.nodata_mask is None else mask.grid.nodata_mask.copy(),
    )
    return OneHot(grid)


def mask_from_onehot(onehot: OneHot) -> ClassMask:
    codes = onehot.planes.argmax(axis=0).astype(np.uint8)
    grid = GeoGrid(
        origin_x=onehot.grid.origin_x,
        origin_y=onehot.grid.origin_y,
        cell_size=onehot.grid.cell_size,
        width=onehot.grid.width,
        height=onehot.grid.height,
        channels=1,
        channel_names=("class",),
        dtype="u8",
        data=codes[None],
        nodata_mask=None if onehot.grid.nodata_mask is None else onehot.grid.nodata_mask.copy(),
    )
    return ClassMask(grid)


# -- stand map JSON -----------------------------------------------------------


def stands_to_json(stands: list[StandPolygon]) -> dict:
    return {
        "stands": [
            {
                "id": s.stand_id,
                "class": s.dev_class,
                "exterior": s.exterior.tolist(),
                "holes": [h.tolist() for h in s.holes],
            }
            for s in stands
        ]
    }


def stands_from_json(doc: dict) -> list[StandPolygon]:
    try:
        records = doc["stands"]
    except (KeyError, TypeError):
        raise DataError("stand map JSON must contain a 'stands' list") from None
    return [
        StandPolygon(
            stand_id=int(rec["id"]),
            dev_class=str(rec["class"]),
            exterior=np.asarray(rec["exterior"], dtype=np.float64),
            holes=[np.asarray(h, dtype=np.float64) for h in rec.get("holes", [])],
        )
        for rec in records
    ]


def load_stand_map(path) -> list[StandPolygon]:
    with open(path, "r", encoding="utf-8") as fh:
        return stands_from_json(json.load(fh))


def dump_stand_map(stands: list[StandPolygon], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stands_to_json(stands), fh)
        fh.write("\n")
