"""Deterministic synthetic forest scenes with exact ground truth.

The generator builds a Voronoi stand partition, a smooth harmonic terrain,
and two point clouds over it:

* an ALS-like cloud: ground returns (class 2, exact terrain height) mixed
  with canopy returns sampling the true canopy height field;
* a DAP-like cloud: denser, carries RGBI values correlated with the stand
  class, and samples a moving-max smoothed canopy (disc maximum approximated
  by 9 probes), which removes canopy gaps and dilates stands outward the way
  image matching does. A small fraction of DAP points see the ground.

Canopy height ranges per development class are generator conventions:
NF 0, I-II 0-9 m, III 8-14 m, IV 13-20 m, V 18-30 m. Stand base heights and
the within-stand texture keep heights strictly inside the range, so class
height distributions overlap only at their edges.

The mapped stand polygons are deliberately imperfect: both clouds evaluate
stand membership at positions displaced by a smooth vector field
(boundary_shift_m per axis), while the emitted polygons and true mask keep
the undisplaced boundaries. Models trained on different composites of the
same scene therefore share boundary errors against the reference, like
models trained against a human-drawn stand map do.

Randomness is split into labeled streams of the scene seed, consumed in a
fixed order: scene-sites, scene-classes, scene-terrain, scene-canopy,
scene-shift, scene-als, scene-dap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .composite import Municipality, municipalities_to_json
from .errors import GeometryError
from .grid import write_grid_file
from .pointcloud import GridSpec, PointCloud, write_points
from .refmask import CODE_NAMES, ClassMask, StandPolygon, dump_stand_map, rasterize_stands
from .rng import rng_for

# (low, high) canopy height per class code; NF is bare ground
CLASS_HEIGHT_RANGES = {0: (0.0, 0.0), 1: (0.0, 9.0), 2: (8.0, 14.0), 3: (13.0, 20.0), 4: (18.0, 30.0)}

GROUND = 2
CANOPY = 1

# base RGBI reflectance per class; greener and NIR-brighter with maturity
CLASS_COLORS = {
    0: (120.0, 110.0, 100.0, 60.0),
    1: (90.0, 130.0, 80.0, 120.0),
    2: (70.0, 120.0, 70.0, 150.0),
    3: (55.0, 105.0, 60.0, 175.0),
    4: (45.0, 90.0, 50.0, 200.0),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent_m: tuple[float, float] = (384.0, 256.0)
    cell_size: float = 1.0
    n_stands: int = 30
    class_mix: tuple[float, ...] = (0.16, 0.21, 0.21, 0.21, 0.21)
    als_density: float = 5.0
    dap_density: float = 25.0
    dap_smoothing_radius: float = 2.0
    dap_ground_frac: float = 0.02
    boundary_shift_m: float = 2.0
    n_municipalities: int = 6
    noise_z: float = 0.02

    def __post_init__(self):
        if self.n_stands < 1:
            raise ValueError(f"n_stands must be >= 1, got {self.n_stands}")
        if self.als_density <= 0 or self.dap_density <= 0:
            raise ValueError("point densities must be > 0")
        if len(self.class_mix) != 5:
            raise ValueError(f"class_mix needs 5 proportions, got {len(self.class_mix)}")
        if any(p < 0 for p in self.class_mix) or abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must be non-negative and sum to 1, got {self.class_mix}")
        w, h = self.extent_m
        if w <= 0 or h <= 0:
            raise ValueError(f"extent must be positive, got {self.extent_m}")
        for side in (w, h):
            if abs(side / self.cell_size - round(side / self.cell_size)) > 1e-9:
                raise ValueError("extent must be a whole number of cells")
        if not 0.0 <= self.dap_ground_frac < 1.0:
            raise ValueError(f"dap_ground_frac must be in [0, 1), got {self.dap_ground_frac}")
        if self.n_municipalities < 1:
            raise ValueError("n_municipalities must be >= 1")

    @property
    def grid_spec(self) -> GridSpec:
        w, h = self.extent_m
        return GridSpec(
            origin_x=0.0,
            origin_y=h,
            width=int(round(w / self.cell_size)),
            height=int(round(h / self.cell_size)),
            cell_size=self.cell_size,
        )


@dataclass(eq=False)
class _Waves:
    """offset + sum of plane waves; evaluates on flat coordinate arrays."""

    freq: np.ndarray  # (k, 2) cycles per meter
    phase: np.ndarray  # (k,)
    amp: np.ndarray  # (k,)
    offset: float = 0.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        arg = 2.0 * np.pi * (np.outer(x, self.freq[:, 0]) + np.outer(y, self.freq[:, 1]))
        arg += self.phase
        return self.offset + (np.sin(arg) * self.amp).sum(axis=1)


def _random_waves(rng: np.random.Generator, k: int, amp_range, wavelen_range, offset=0.0) -> _Waves:
    angles = rng.uniform(0.0, 2.0 * np.pi, size=k)
    wavelens = rng.uniform(*wavelen_range, size=k)
    freq = np.column_stack([np.cos(angles), np.sin(angles)]) / wavelens[:, None]
    phase = rng.uniform(0.0, 2.0 * np.pi, size=k)
    amp = rng.uniform(*amp_range, size=k)
    return _Waves(freq=freq, phase=phase, amp=amp, offset=offset)


@dataclass(eq=False)
class Scene:
    spec: SceneSpec
    sites: np.ndarray
    stand_classes: np.ndarray
    stands: list[StandPolygon]
    municipalities: list[Municipality]
    als: PointCloud
    dap: PointCloud
    true_mask: ClassMask
    terrain: _Waves | None = field(repr=False, default=None)


# -- voronoi stands ----------------------------------------------------------------


def _draw_sites(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Uniform sites with a minimum separation, by deterministic rejection."""
    w, h = spec.extent_m
    min_sep = 0.35 * math.sqrt(w * h / spec.n_stands)
    sites: list[np.ndarray] = []
    attempts = 0
    while len(sites) < spec.n_stands:
        attempts += 1
        if attempts > 10000 * spec.n_stands:
            raise GeometryError("could not place stand sites with the required separation")
        p = rng.uniform(0.0, 1.0, size=2) * (w, h)
        if all(np.hypot(*(p - q)) >= min_sep for q in sites):
            sites.append(p)
    return np.asarray(sites)


def _clip_halfplane(poly: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    """Sutherland-Hodgman step keeping a*x + b*y <= c."""
    out = []
    n = len(poly)
    for i in range(n):
        p = poly[i]
        q = poly[(i + 1) % n]
        p_in = a * p[0] + b * p[1] <= c
        q_in = a * q[0] + b * q[1] <= c
        if p_in:
            out.append(p)
        if p_in != q_in:
            denom = a * (q[0] - p[0]) + b * (q[1] - p[1])
            t = (c - a * p[0] - b * p[1]) / denom
            out.append(p + t * (q - p))
    return np.asarray(out)


def _voronoi_cell(sites: np.ndarray, i: int, extent: tuple[float, float]) -> np.ndarray:
    w, h = extent
    poly = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    si = sites[i]
    for j, sj in enumerate(sites):
        if j == i:
            continue
        # closer to si than sj: 2*(sj - si) . x <= |sj|^2 - |si|^2
        d = 2.0 * (sj - si)
        c = float(sj @ sj - si @ si)
        poly = _clip_halfplane(poly, d[0], d[1], c)
        if len(poly) < 3:
            raise GeometryError(f"stand site {i} produced a degenerate cell")
    return poly


def _assign_classes(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Largest-remainder allocation of the class mix, then a seeded shuffle,
    so every class with enough nominal share is actually present."""
    mix = np.asarray(spec.class_mix)
    ideal = mix * spec.n_stands
    counts = np.floor(ideal).astype(int)
    remainder = spec.n_stands - counts.sum()
    order = np.argsort(-(ideal - counts), kind="stable")
    for idx in order[:remainder]:
        counts[idx] += 1
    codes = np.repeat(np.arange(5), counts)
    return codes[rng.permutation(spec.n_stands)]


# -- generation ---------------------------------------------------------------------


def generate_scene(spec: SceneSpec) -> Scene:
    seed = spec.seed
    sites = _draw_sites(rng_for(seed, "scene-sites"), spec)
    stand_classes = _assign_classes(rng_for(seed, "scene-classes"), spec)

    stands = []
    for i in range(spec.n_stands):
        ring = _voronoi_cell(sites, i, spec.extent_m)
        closed = np.vstack([ring, ring[:1]])
        stands.append(StandPolygon(stand_id=i, dev_class=CODE_NAMES[int(stand_classes[i])], exterior=closed, holes=[]))
    true_mask = rasterize_stands(stands, spec.grid_spec)

    terrain_rng = rng_for(seed, "scene-terrain")
    terrain = _random_waves(terrain_rng, k=4, amp_range=(1.5, 3.5), wavelen_range=(150.0, 400.0), offset=60.0)

    canopy_rng = rng_for(seed, "scene-canopy")
    # per-stand base height sits in the middle half of the class range; the
    # shared texture contributes +-25% of the range, so heights stay inside it
    ranges = np.array([CLASS_HEIGHT_RANGES[int(c)] for c in stand_classes])
    span = ranges[:, 1] - ranges[:, 0]
    base_frac = canopy_rng.uniform(0.3, 0.7, size=spec.n_stands)
    stand_base = ranges[:, 0] + base_frac * span
    stand_tex_amp = 0.25 * span
    tex_waves = _random_waves(canopy_rng, k=3, amp_range=(0.25, 0.45), wavelen_range=(20.0, 60.0))

    shift_rng = rng_for(seed, "scene-shift")
    shift_x = _random_waves(shift_rng, k=2, amp_range=(0.4 * spec.boundary_shift_m, 0.6 * spec.boundary_shift_m), wavelen_range=(80.0, 160.0))
    shift_y = _random_waves(shift_rng, k=2, amp_range=(0.4 * spec.boundary_shift_m, 0.6 * spec.boundary_shift_m), wavelen_range=(80.0, 160.0))

    tree = cKDTree(sites)
    w, h = spec.extent_m

    def data_stand_of(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Stand index the *data* sees: membership at the displaced position."""
        sx = np.clip(x + shift_x(x, y), 0.0, w)
        sy = np.clip(y + shift_y(x, y), 0.0, h)
        return tree.query(np.column_stack([sx, sy]), k=1)[1]

    def canopy_height(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        stand = data_stand_of(x, y)
        height = stand_base[stand] + stand_tex_amp[stand] * np.clip(tex_waves(x, y), -1.0, 1.0)
        return np.clip(height, ranges[stand, 0], ranges[stand, 1])

    als = _make_als(spec, terrain, canopy_height, rng_for(seed, "scene-als"))
    dap = _make_dap(spec, terrain, canopy_height, data_stand_of, stand_classes, rng_for(seed, "scene-dap"))

    municipalities = _make_municipalities(spec)
    return Scene(
        spec=spec,
        sites=sites,
        stand_classes=stand_classes,
        stands=stands,
        municipalities=municipalities,
        als=als,
        dap=dap,
        true_mask=true_mask,
        terrain=terrain,
    )


def _make_als(spec: SceneSpec, terrain, canopy_height, rng: np.random.Generator) -> PointCloud:
    w, h = spec.extent_m
    n = int(round(spec.als_density * w * h))
    x = rng.uniform(0.0, w, size=n)
    y = rng.uniform(0.0, h, size=n)
    ground = rng.random(n) < 0.35
    z_ground = terrain(x, y)
    height = canopy_height(x, y)
    noise = rng.normal(0.0, spec.noise_z, size=n)
    z = np.where(ground, z_ground, z_ground + height + noise)
    cls = np.where(ground, GROUND, CANOPY).astype(np.int32)
    return PointCloud(x=x, y=y, z=z, cls=cls)


def _disc_max(canopy_height, x: np.ndarray, y: np.ndarray, radius: float, extent) -> np.ndarray:
    """Approximate max of the canopy field over a disc: centre + 8 ring probes."""
    w, h = extent
    best = canopy_height(x, y)
    for k in range(8):
        ang = 2.0 * np.pi * k / 8.0
        px = np.clip(x + radius * np.cos(ang), 0.0, w)
        py = np.clip(y + radius * np.sin(ang), 0.0, h)
        best = np.maximum(best, canopy_height(px, py))
    return best


def _make_dap(
    spec: SceneSpec, terrain, canopy_height, data_stand_of, stand_classes, rng: np.random.Generator
) -> PointCloud:
    w, h = spec.extent_m
    n = int(round(spec.dap_density * w * h))
    x = rng.uniform(0.0, w, size=n)
    y = rng.uniform(0.0, h, size=n)
    smoothed = _disc_max(canopy_height, x, y, spec.dap_smoothing_radius, spec.extent_m)
    gap_visible = rng.random(n) < spec.dap_ground_frac
    ground = (smoothed < 0.2) | gap_visible
    z_ground = terrain(x, y)
    noise = rng.normal(0.0, 2.5 * spec.noise_z, size=n)
    z = np.where(ground, z_ground, z_ground + smoothed + noise)
    cls = np.where(ground, GROUND, CANOPY).astype(np.int32)

    codes = stand_classes[data_stand_of(x, y)]
    colors = np.array([CLASS_COLORS[c] for c in range(5)])
    spectral = colors[codes] + rng.normal(0.0, 8.0, size=(n, 4))
    spectral = np.rint(np.clip(spectral, 0.0, 255.0))
    return PointCloud(
        x=x,
        y=y,
        z=z,
        cls=cls,
        r=spectral[:, 0],
        g=spectral[:, 1],
        b=spectral[:, 2],
        nir=spectral[:, 3],
    )


def _make_municipalities(spec: SceneSpec) -> list[Municipality]:
    """Vertical bands covering the extent, ids left to right."""
    w, h = spec.extent_m
    band = w / spec.n_municipalities
    out = []
    for i in range(spec.n_municipalities):
        x0, x1 = i * band, (i + 1) * band
        ring = np.array([[x0, 0.0], [x1, 0.0], [x1, h], [x0, h], [x0, 0.0]])
        out.append(Municipality(id=i, exterior=ring))
    return out


# -- on-disk layout -----------------------------------------------------------------


def write_scene(scene: Scene, outdir) -> dict[str, str]:
    """Write als.csv, dap.csv, stands.json, municipalities.json, true_mask.sdgr."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "als": out / "als.csv",
        "dap": out / "dap.csv",
        "stands": out / "stands.json",
        "municipalities": out / "municipalities.json",
        "true_mask": out / "true_mask.sdgr",
    }
    write_points(scene.als, paths["als"])
    write_points(scene.dap, paths["dap"])
    dump_stand_map(scene.stands, paths["stands"])
    with open(paths["municipalities"], "w", encoding="utf-8") as fh:
        json.dump(municipalities_to_json(scene.municipalities), fh, indent=1)
        fh.write("\n")
    write_grid_file(scene.true_mask.grid, paths["true_mask"])
    grid = scene.spec.grid_spec
    paths["grid"] = out / "grid.json"
    with open(paths["grid"], "w", encoding="utf-8") as fh:
        json.dump(
            {
                "origin_x": grid.origin_x,
                "origin_y": grid.origin_y,
                "width": grid.width,
                "height": grid.height,
                "cell_size": grid.cell_size,
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
