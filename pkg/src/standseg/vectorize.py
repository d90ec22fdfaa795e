"""Class masks to stand polygons: connected components, exact pixel-edge
boundary tracing, minimum-mapping-unit absorption, and a shape index.

Region ids are assigned by first pixel in row-major order, so labeling is
reproducible. Polygon rings follow pixel edges; ring vertices are traced in
integer corner coordinates and only scaled to map coordinates at the end, so
the shoelace area agrees with the pixel count exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError, GeometryError, ShapeError
from .grid import GeoGrid
from .pointcloud import GridSpec, spec_of
from .refmask import CODE_NAMES

FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT = np.ones((3, 3), dtype=bool)

DEFAULT_MMU_M2 = 2000.0


@dataclass(eq=False)
class Region:
    """One connected same-class patch; runs are (row, col_start, col_end)
    half-open row intervals in row-major order."""

    region_id: int
    dev_class: int
    pixel_count: int
    cell_size: float
    runs: np.ndarray
    flagged: bool = False

    @property
    def area_m2(self) -> float:
        return self.pixel_count * self.cell_size * self.cell_size


@dataclass(eq=False)
class RegionSet:
    label_map: np.ndarray  # int32, -1 where masked out
    regions: list[Region]
    connectivity: int
    spec: GridSpec

    def total_pixels(self) -> int:
        return int((self.label_map >= 0).sum())


def _runs_by_label(label_map: np.ndarray) -> dict[int, np.ndarray]:
    h, w = label_map.shape
    starts = np.ones_like(label_map, dtype=bool)
    starts[:, 1:] = label_map[:, 1:] != label_map[:, :-1]
    rows, cols = np.nonzero(starts)
    labels = label_map[rows, cols]
    # run end = next start in the same row, else the row end
    ends = np.empty(len(rows), dtype=np.int64)
    ends[:-1] = np.where(rows[:-1] == rows[1:], cols[1:], w)
    if len(rows):
        ends[-1] = w
    keep = labels >= 0
    table = np.column_stack([rows[keep], cols[keep], ends[keep]])
    order = np.argsort(labels[keep], kind="stable")
    sorted_labels = labels[keep][order]
    sorted_table = table[order]
    out = {}
    for lab, chunk_start, chunk_end in zip(*_group_bounds(sorted_labels)):
        out[int(lab)] = sorted_table[chunk_start:chunk_end]
    return out


def _group_bounds(sorted_keys: np.ndarray):
    if len(sorted_keys) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    change = np.nonzero(np.diff(sorted_keys))[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(sorted_keys)]])
    return sorted_keys[starts], starts, ends


def components(
    mask: GeoGrid | np.ndarray,
    connectivity: int = 4,
    spec: GridSpec | None = None,
    valid: np.ndarray | None = None,
) -> RegionSet:
    """Per-class connected components. Pixels share a region iff they hold the
    same class and are 4- or 8-connected; masked pixels get label -1."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    if isinstance(mask, GeoGrid):
        if spec is None:
            spec = spec_of(mask)
        if valid is None:
            valid = mask.valid_mask()
        values = mask.data[0]
    else:
        values = np.asarray(mask)
        if spec is None:
            spec = GridSpec(0.0, float(values.shape[0]), values.shape[1], values.shape[0])
    if values.ndim != 2:
        raise ShapeError(f"class mask must be 2-d, got shape {values.shape}")
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    structure = FOUR if connectivity == 4 else EIGHT

    label_map = np.full(values.shape, -1, dtype=np.int32)
    offset = 0
    for cls in np.unique(values[valid]):
        part, n = ndimage.label((values == cls) & valid, structure=structure)
        sel = part > 0
        label_map[sel] = part[sel] - 1 + offset
        offset += n

    # renumber by first appearance in row-major order
    flat = label_map.ravel()
    present, first_idx = np.unique(flat, return_index=True)
    keep = present >= 0
    present, first_idx = present[keep], first_idx[keep]
    order = np.argsort(first_idx, kind="stable")
    lookup = np.full(offset if offset else 1, -1, dtype=np.int32)
    lookup[present[order]] = np.arange(len(present), dtype=np.int32)
    label_map = np.where(label_map >= 0, lookup[np.maximum(label_map, 0)], -1).astype(np.int32)

    runs = _runs_by_label(label_map)
    regions = []
    for new_id in range(len(present)):
        r = runs[new_id]
        row0, col0 = int(r[0, 0]), int(r[0, 1])
        regions.append(
            Region(
                region_id=new_id,
                dev_class=int(values[row0, col0]),
                pixel_count=int((r[:, 2] - r[:, 1]).sum()),
                cell_size=spec.cell_size,
                runs=r,
            )
        )
    return RegionSet(label_map=label_map, regions=regions, connectivity=connectivity, spec=spec)


# -- boundary tracing ---------------------------------------------------------------

# directions in (row, col) corner space; right/left turns as seen on screen
_N, _E, _S, _W = 0, 1, 2, 3
_STEP = {_N: (-1, 0), _E: (0, 1), _S: (1, 0), _W: (0, -1)}
_RIGHT = {_N: _E, _E: _S, _S: _W, _W: _N}
_LEFT = {v: k for k, v in _RIGHT.items()}


def _region_bitmap(region: Region, shape: tuple[int, int]) -> np.ndarray:
    bit = np.zeros(shape, dtype=bool)
    for row, c0, c1 in region.runs:
        bit[row, c0:c1] = True
    return bit


def _directed_edges(bit: np.ndarray) -> set[tuple[int, int, int]]:
    """Directed boundary edges as (corner_r, corner_c, direction) triples.

    The region stays on the walker's left in map coordinates (y up), which
    makes exterior rings counterclockwise there and holes clockwise: north
    pixel edges head west, west edges south, south edges east, east edges
    north.
    """
    pad = np.zeros((bit.shape[0] + 2, bit.shape[1] + 2), dtype=bool)
    pad[1:-1, 1:-1] = bit
    up = pad[:-2, 1:-1]
    down = pad[2:, 1:-1]
    left = pad[1:-1, :-2]
    right = pad[1:-1, 2:]

    edges: set[tuple[int, int, int]] = set()
    for boundary, direction, corner_of in (
        (bit & ~up, _W, lambda r, c: (r, c + 1)),  # north edge: east corner, heading west
        (bit & ~left, _S, lambda r, c: (r, c)),  # west edge: north corner, heading south
        (bit & ~down, _E, lambda r, c: (r + 1, c)),  # south edge: west corner, heading east
        (bit & ~right, _N, lambda r, c: (r + 1, c + 1)),  # east edge: south corner, heading north
    ):
        for r, c in zip(*np.nonzero(boundary)):
            start = corner_of(int(r), int(c))
            edges.add((start[0], start[1], direction))
    return edges


def _trace_rings(bit: np.ndarray, connectivity: int) -> list[np.ndarray]:
    """Closed rings of corner points (row, col).

    At checker corners (two diagonal region pixels, two diagonal background
    pixels) two continuations exist. 4-connectivity turns toward the pixel
    just walked (the diagonal pair are separate lobes and stay pinched
    apart); 8-connectivity turns away (the diagonal join is part of one
    boundary). With the edge convention above those are the left and right
    turn respectively.
    """
    edges = _directed_edges(bit)
    unused = dict.fromkeys(sorted(edges))
    rings = []
    while unused:
        start_key = next(iter(unused))
        ring = [start_key[:2]]
        key = start_key
        while True:
            del unused[key]
            r, c, d = key
            dr, dc = _STEP[d]
            corner = (r + dr, c + dc)
            ring.append(corner)
            viable = [
                dd
                for dd in (_N, _E, _S, _W)
                if (corner[0], corner[1], dd) in unused or (corner[0], corner[1], dd) == start_key
            ]
            if not viable:
                raise GeometryError(f"boundary walk dead-ends at corner {corner}")
            if len(viable) == 1:
                nd = viable[0]
            else:
                prefer = _LEFT[d] if connectivity == 4 else _RIGHT[d]
                nd = prefer if prefer in viable else viable[0]
            key = (corner[0], corner[1], nd)
            if key == start_key:
                break
        rings.append(np.asarray(ring, dtype=np.int64))
    return rings


def _simplify_ring(ring: np.ndarray) -> np.ndarray:
    """Drop collinear midpoints; keeps the ring closed."""
    pts = ring[:-1]
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    d1 = pts - prev
    d2 = nxt - pts
    corner = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) != 0
    kept = pts[corner]
    return np.vstack([kept, kept[:1]])


def _ring_area_cells(ring: np.ndarray) -> float:
    """Signed shoelace area in pixel units, positive = counterclockwise in
    map coordinates (integer arithmetic, halved at the end)."""
    r = ring[:, 0].astype(np.int64)
    c = ring[:, 1].astype(np.int64)
    # map coords: x = c, y = -r (up); shoelace over consecutive pairs
    twice = np.sum(c[:-1] * (-(r[1:])) - c[1:] * (-(r[:-1])))
    return twice / 2.0


@dataclass(eq=False)
class StandOutPolygon:
    region_id: int
    dev_class: int
    exterior: np.ndarray  # (n, 2) map coordinates, closed
    holes: list[np.ndarray]
    area_m2: float
    perimeter_m: float
    flagged: bool

    @property
    def shape_index(self) -> float:
        return self.perimeter_m**2 / (4.0 * math.pi * self.area_m2)


def _to_map(ring: np.ndarray, spec: GridSpec) -> np.ndarray:
    out = np.empty((len(ring), 2), dtype=np.float64)
    out[:, 0] = spec.origin_x + ring[:, 1] * spec.cell_size
    out[:, 1] = spec.origin_y - ring[:, 0] * spec.cell_size
    return out


def polygonize(region_set: RegionSet) -> list[StandOutPolygon]:
    """Trace every region into one exterior ring plus hole rings.

    The exact-area check is structural: the signed cell areas of the traced
    rings must add up to the region's pixel count or the tracing is wrong.
    """
    shape = region_set.label_map.shape
    spec = region_set.spec
    polygons = []
    for region in region_set.regions:
        bit = _region_bitmap(region, shape)
        rings = _trace_rings(bit, region_set.connectivity)
        exterior = None
        holes = []
        net_cells = 0.0
        perim_cells = 0
        for ring in rings:
            area = _ring_area_cells(ring)
            net_cells += area
            perim_cells += len(ring) - 1
            simplified = _simplify_ring(ring)
            if area > 0:
                if exterior is not None:
                    raise DataError(f"region {region.region_id} traced two exterior rings")
                exterior = simplified
            else:
                holes.append(simplified)
        if exterior is None:
            raise DataError(f"region {region.region_id} has no exterior ring")
        if net_cells != region.pixel_count:
            raise DataError(
                f"region {region.region_id}: traced area {net_cells} cells != {region.pixel_count} pixels"
            )
        polygons.append(
            StandOutPolygon(
                region_id=region.region_id,
                dev_class=region.dev_class,
                exterior=_to_map(exterior, spec),
                holes=[_to_map(h, spec) for h in holes],
                area_m2=region.pixel_count * spec.cell_size**2,
                perimeter_m=perim_cells * spec.cell_size,
                flagged=region.flagged,
            )
        )
    return polygons


# -- minimum mapping unit ---------------------------------------------------------


@dataclass(frozen=True)
class MergeRecord:
    absorbed_id: int
    into_id: int
    area_m2: float
    shared_edges: int


def _pair_edge_counts(label_map: np.ndarray) -> dict[tuple[int, int], int]:
    """Shared-boundary edge counts between 4-adjacent distinct regions."""
    base = int(label_map.max()) + 1
    pairs: dict[tuple[int, int], int] = {}
    for a, b in (
        (label_map[:, :-1].ravel(), label_map[:, 1:].ravel()),
        (label_map[:-1, :].ravel(), label_map[1:, :].ravel()),
    ):
        sel = (a != b) & (a >= 0) & (b >= 0)
        lo = np.minimum(a[sel], b[sel]).astype(np.int64)
        hi = np.maximum(a[sel], b[sel]).astype(np.int64)
        if len(lo) == 0:
            continue
        uniq, counts = np.unique(lo * base + hi, return_counts=True)
        for k, n in zip(uniq, counts):
            pair = (int(k // base), int(k % base))
            pairs[pair] = pairs.get(pair, 0) + int(n)
    return pairs


def mmu_filter(
    region_set: RegionSet, min_area_m2: float = DEFAULT_MMU_M2
) -> tuple[RegionSet, list[MergeRecord]]:
    """Absorb undersized regions into the neighbor sharing the longest
    boundary (ties: larger neighbor, then lower id). Undersized regions are
    processed smallest first (ties: lower id); a region with no neighbor is
    kept and flagged. Pixels are conserved."""
    labels = region_set.label_map.copy()
    regions = {r.region_id: r for r in region_set.regions}
    pixel_count = {r.region_id: r.pixel_count for r in region_set.regions}
    dev_class = {r.region_id: r.dev_class for r in region_set.regions}
    cell_area = region_set.spec.cell_size**2

    pairs = _pair_edge_counts(labels)
    neighbors: dict[int, dict[int, int]] = {rid: {} for rid in regions}
    for (a, b), n in pairs.items():
        neighbors[a][b] = n
        neighbors[b][a] = n

    flagged: set[int] = set()
    merged_into: dict[int, int] = {}
    log: list[MergeRecord] = []

    def undersized():
        pending = [
            rid
            for rid in regions
            if rid not in merged_into
            and rid not in flagged
            and pixel_count[rid] * cell_area < min_area_m2
        ]
        pending.sort(key=lambda rid: (pixel_count[rid], rid))
        return pending

    pending = undersized()
    while pending:
        rid = pending[0]
        near = neighbors[rid]
        if not near:
            flagged.add(rid)
            pending = undersized()
            continue
        target = max(near.items(), key=lambda kv: (kv[1], pixel_count[kv[0]], -kv[0]))[0]
        shared = near[target]
        log.append(
            MergeRecord(
                absorbed_id=rid,
                into_id=target,
                area_m2=pixel_count[rid] * cell_area,
                shared_edges=shared,
            )
        )
        # fold rid into target: counts, adjacency, provenance
        pixel_count[target] += pixel_count.pop(rid)
        for other, n in near.items():
            if other == target:
                continue
            neighbors[other].pop(rid, None)
            neighbors[other][target] = neighbors[other].get(target, 0) + n
            neighbors[target][other] = neighbors[other][target]
        neighbors[target].pop(rid, None)
        del neighbors[rid]
        merged_into[rid] = target
        del regions[rid]
        pending = undersized()

    # resolve chains a -> b -> c before rewriting the label map
    def resolve(rid: int) -> int:
        while rid in merged_into:
            rid = merged_into[rid]
        return rid

    max_label = int(region_set.label_map.max()) + 1 if region_set.regions else 1
    remap = np.arange(max_label, dtype=np.int32)
    for rid in range(max_label):
        remap[rid] = resolve(rid)
    new_labels = np.where(labels >= 0, remap[np.maximum(labels, 0)], -1).astype(np.int32)

    # renumber survivors by first appearance, mirroring components()
    flat = new_labels.ravel()
    present, first_idx = np.unique(flat, return_index=True)
    keep = present >= 0
    present, first_idx = present[keep], first_idx[keep]
    order = np.argsort(first_idx, kind="stable")
    lookup = np.full(max_label, -1, dtype=np.int32)
    lookup[present[order]] = np.arange(len(present), dtype=np.int32)
    final_labels = np.where(new_labels >= 0, lookup[np.maximum(new_labels, 0)], -1).astype(np.int32)

    runs = _runs_by_label(final_labels)
    out_regions = []
    for new_id in range(len(present)):
        old_id = int(present[order][new_id])
        r = runs[new_id]
        out_regions.append(
            Region(
                region_id=new_id,
                dev_class=dev_class[old_id],
                pixel_count=int((r[:, 2] - r[:, 1]).sum()),
                cell_size=region_set.spec.cell_size,
                runs=r,
                flagged=old_id in flagged,
            )
        )
    out = RegionSet(
        label_map=final_labels,
        regions=out_regions,
        connectivity=region_set.connectivity,
        spec=region_set.spec,
    )
    if out.total_pixels() != region_set.total_pixels():
        raise DataError("mmu_filter lost pixels; this is a bug")
    return out, log


# -- output -----------------------------------------------------------------------


def polygons_to_json(polygons: list[StandOutPolygon]) -> dict:
    return {
        "stands": [
            {
                "id": p.region_id,
                "class": CODE_NAMES[p.dev_class],
                "exterior": p.exterior.tolist(),
                "holes": [h.tolist() for h in p.holes],
                "area_m2": p.area_m2,
                "shape_index": p.shape_index,
                "flag": "undersized" if p.flagged else None,
            }
            for p in polygons
        ]
    }


def regions_to_csv(region_set: RegionSet) -> str:
    lines = ["region_id,class,pixel_count,area_m2,flagged"]
    for r in region_set.regions:
        lines.append(
            f"{r.region_id},{CODE_NAMES[r.dev_class]},{r.pixel_count},{r.area_m2:.3f},{int(r.flagged)}"
        )
    return "\n".join(lines) + "\n"


def write_stand_json(path, polygons: list[StandOutPolygon]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(polygons_to_json(polygons), fh, indent=1)
        fh.write("\n")
