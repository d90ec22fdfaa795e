"""PNG rendering of class masks and grids.

Fixed class colormap: NF gray, I-II yellow, III light green, IV green,
V dark green. Grayscale maps [0, 1] to [0, 255] with round-half-up; rgb
takes the first three channels times 255. Nodata pixels render black.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import DataError
from .grid import GeoGrid

CLASS_COLORS = {
    0: (0x80, 0x80, 0x80),
    1: (0xE8, 0xD4, 0x4D),
    2: (0xA8, 0xD0, 0x8D),
    3: (0x4F, 0x9D, 0x4F),
    4: (0x1E, 0x5B, 0x1E),
}

STYLES = ("classmap", "grayscale", "rgb")


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def render_png(grid: GeoGrid, style: str) -> bytes:
    """Encode one grid as PNG bytes; deterministic for identical inputs."""
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}, got {style!r}")
    valid = grid.valid_mask()
    if style == "classmap":
        if grid.channels != 1:
            raise ValueError(f"classmap needs a 1-channel mask, got {grid.channels} channels")
        codes = grid.data[0]
        if codes.max(initial=0) >= len(CLASS_COLORS):
            raise DataError(f"classmap needs codes < {len(CLASS_COLORS)}, got {int(codes.max())}")
        table = np.zeros((len(CLASS_COLORS), 3), dtype=np.uint8)
        for code, color in CLASS_COLORS.items():
            table[code] = color
        rgb = table[codes.astype(np.int64)]
        rgb[~valid] = 0
    elif style == "grayscale":
        if grid.channels != 1:
            raise ValueError(f"grayscale needs 1 channel, got {grid.channels}")
        gray = _round_half_up(grid.data[0].astype(np.float64))
        gray[~valid] = 0
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
    else:
        if grid.channels < 3:
            raise ValueError(f"rgb needs >= 3 channels, got {grid.channels}")
        rgb = _round_half_up(grid.data[:3].astype(np.float64)).transpose(1, 2, 0).copy()
        rgb[~valid] = 0
    image = Image.fromarray(rgb, mode="RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, grid: GeoGrid, style: str) -> None:
    data = render_png(grid, style)
    with open(path, "wb") as fh:
        fh.write(data)
