"""Georeferenced multi-channel raster container and its binary format.

Conventions: planar meter coordinates, row 0 is the northern edge, data is
stored channel-planar (C, H, W) so a single channel is a contiguous slice.
The cell center of (row, col) sits at

    x = origin_x + (col + 0.5) * cell_size
    y = origin_y - (row + 0.5) * cell_size

Grids are immutable after construction; nodata is an explicit boolean mask
rather than a sentinel value (0 is a legitimate height).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"SDGR"
VERSION = 1

_DTYPE_CODES = {"f32": 0, "u8": 1, "f64": 2}
_DTYPE_NUMPY = {"f32": np.float32, "u8": np.uint8, "f64": np.float64}
_DTYPE_WIRE = {"f32": "<f4", "u8": "|u1", "f64": "<f8"}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(eq=False)
class GridWindow:
    """Pixel-space window (row0, col0, n_rows, n_cols) into a parent grid."""

    row0: int
    col0: int
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"window size must be >= 1, got {self.n_rows}x{self.n_cols}")


@dataclass(eq=False)
class GeoGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int
    channels: int
    channel_names: tuple[str, ...]
    dtype: str  # "f32", "f64" or "u8"; f64 keeps absolute elevations exact
    data: np.ndarray  # (channels, height, width)
    nodata_mask: np.ndarray | None = field(default=None)  # (height, width) bool

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.dtype not in _DTYPE_CODES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPE_CODES)}, got {self.dtype!r}")
        if len(self.channel_names) != self.channels:
            raise ValueError(f"{self.channels} channels but {len(self.channel_names)} names")
        self.channel_names = tuple(self.channel_names)
        want = _DTYPE_NUMPY[self.dtype]
        self.data = np.ascontiguousarray(self.data, dtype=want).reshape(
            self.channels, self.height, self.width
        )
        self.data.setflags(write=False)
        if self.nodata_mask is not None:
            self.nodata_mask = np.ascontiguousarray(self.nodata_mask, dtype=bool).reshape(
                self.height, self.width
            )
            self.nodata_mask.setflags(write=False)

    # -- georeferencing ----------------------------------------------------

    def cell_center(self, row, col):
        """Map coordinate of the cell center (vectorized over arrays)."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.cell_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.cell_size
        return x, y

    def cell_index(self, x, y):
        """(row, col) of the cell containing map point (x, y); may be out of range."""
        col = np.floor((np.asarray(x) - self.origin_x) / self.cell_size).astype(np.int64)
        row = np.floor((self.origin_y - np.asarray(y)) / self.cell_size).astype(np.int64)
        return row, col

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]

    def valid_mask(self) -> np.ndarray:
        """(H, W) bool, True where the pixel carries data."""
        if self.nodata_mask is None:
            return np.ones((self.height, self.width), dtype=bool)
        return ~self.nodata_mask

    def same_as(self, other: "GeoGrid") -> bool:
        """Field-for-field equality, exact on values."""
        if (
            self.origin_x != other.origin_x
            or self.origin_y != other.origin_y
            or self.cell_size != other.cell_size
            or self.width != other.width
            or self.height != other.height
            or self.channels != other.channels
            or self.channel_names != other.channel_names
            or self.dtype != other.dtype
        ):
            return False
        if not np.array_equal(self.data, other.data):
            return False
        a = self.nodata_mask
        b = other.nodata_mask
        if (a is None) != (b is None):
            return False
        return a is None or np.array_equal(a, b)


def grid_spec_matches(a: GeoGrid, b: GeoGrid) -> str | None:
    """Name of the first georeferencing field that differs, or None."""
    for name in ("origin_x", "origin_y", "cell_size", "width", "height"):
        if getattr(a, name) != getattr(b, name):
            return name
    return None


# -- SDGR container ---------------------------------------------------------

_HEADER = struct.Struct("<4sHBBIIHddd")


def write_grid(grid: GeoGrid, sink: BinaryIO) -> int:
    """Serialize to the SDGR container. Returns the number of bytes written."""
    flags = 1 if grid.nodata_mask is not None else 0
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        _DTYPE_CODES[grid.dtype],
        flags,
        grid.width,
        grid.height,
        grid.channels,
        grid.origin_x,
        grid.origin_y,
        grid.cell_size,
    )
    n = sink.write(header)
    for name in grid.channel_names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"channel name too long: {name!r}")
        n += sink.write(struct.pack("<B", len(raw)))
        n += sink.write(raw)
    payload = grid.data.astype(_DTYPE_WIRE[grid.dtype], copy=False)
    n += sink.write(payload.tobytes())
    if grid.nodata_mask is not None:
        n += sink.write(grid.nodata_mask.astype(np.uint8).tobytes())
    return n


def read_grid(source: BinaryIO) -> GeoGrid:
    """Read an SDGR container, validating structure byte by byte."""
    buf = source.read()
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}", offset=0)
    magic, version, dtype_code, flags, width, height, channels, ox, oy, cell = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=6)
    dtype = _CODE_DTYPES[dtype_code]
    pos = _HEADER.size
    names = []
    for i in range(channels):
        if pos + 1 > len(buf):
            raise FormatError(f"truncated channel name table (channel {i})", offset=pos)
        (name_len,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        if pos + name_len > len(buf):
            raise FormatError(f"truncated channel name (channel {i})", offset=pos)
        names.append(buf[pos : pos + name_len].decode("utf-8"))
        pos += name_len
    item = np.dtype(_DTYPE_WIRE[dtype]).itemsize
    payload_len = channels * height * width * item
    if pos + payload_len > len(buf):
        raise FormatError(
            f"truncated payload: expected {payload_len} bytes, got {len(buf) - pos}", offset=pos
        )
    data = np.frombuffer(buf, dtype=_DTYPE_WIRE[dtype], count=channels * height * width, offset=pos)
    data = data.reshape(channels, height, width).astype(_DTYPE_NUMPY[dtype])
    pos += payload_len
    nodata = None
    if flags & 1:
        mask_len = height * width
        if pos + mask_len > len(buf):
            raise FormatError(
                f"truncated nodata mask: expected {mask_len} bytes, got {len(buf) - pos}", offset=pos
            )
        nodata = np.frombuffer(buf, dtype=np.uint8, count=mask_len, offset=pos).reshape(
            height, width
        ).astype(bool)
    return GeoGrid(
        origin_x=ox,
        origin_y=oy,
        cell_size=cell,
        width=width,
        height=height,
        channels=channels,
        channel_names=tuple(names),
        dtype=dtype,
        data=data,
        nodata_mask=nodata,
    )


def write_grid_file(grid: GeoGrid, path) -> int:
    with open(path, "wb") as fh:
        return write_grid(grid, fh)


def read_grid_file(path) -> GeoGrid:
    with open(path, "rb") as fh:
        return read_grid(fh)


def crop(grid: GeoGrid, window: GridWindow) -> GeoGrid:
    """Copy a window out of a grid, shifting the origin accordingly."""
    r0, c0 = window.row0, window.col0
    r1, c1 = r0 + window.n_rows, c0 + window.n_cols
    if r0 < 0 or c0 < 0 or r1 > grid.height or c1 > grid.width:
        raise ValueError(
            f"window ({r0},{c0},{window.n_rows},{window.n_cols}) outside "
            f"{grid.height}x{grid.width} grid"
        )
    return GeoGrid(
        origin_x=grid.origin_x + c0 * grid.cell_size,
        origin_y=grid.origin_y - r0 * grid.cell_size,
        cell_size=grid.cell_size,
        width=window.n_cols,
        height=window.n_rows,
        channels=grid.channels,
        channel_names=grid.channel_names,
        dtype=grid.dtype,
        data=grid.data[:, r0:r1, c0:c1].copy(),
        nodata_mask=None if grid.nodata_mask is None else grid.nodata_mask[r0:r1, c0:c1].copy(),
    )
