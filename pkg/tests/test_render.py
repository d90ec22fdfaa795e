import io

import numpy as np
import pytest
from PIL import Image

from standseg.errors import DataError
from standseg.grid import GeoGrid
from standseg.render import CLASS_COLORS, render_png, write_png


def grid_of(data, dtype="f32", nodata=None):
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[None]
    c, h, w = data.shape
    return GeoGrid(
        origin_x=0.0,
        origin_y=float(h),
        cell_size=1.0,
        width=w,
        height=h,
        channels=c,
        channel_names=tuple(f"c{i}" for i in range(c)),
        dtype=dtype,
        data=data,
        nodata_mask=nodata,
    )


def decode(png_bytes):
    return np.asarray(Image.open(io.BytesIO(png_bytes)).convert("RGB"))


def test_classmap_uses_fixed_palette():
    codes = np.arange(5, dtype=np.uint8).reshape(1, 5)
    img = decode(render_png(grid_of(codes, dtype="u8"), "classmap"))
    assert img.shape == (1, 5, 3)
    for code, color in CLASS_COLORS.items():
        assert tuple(img[0, code]) == color
    assert tuple(img[0, 0]) == (0x80, 0x80, 0x80)
    assert tuple(img[0, 4]) == (0x1E, 0x5B, 0x1E)


def test_classmap_rejects_unknown_codes_and_multichannel():
    bad = grid_of(np.full((2, 2), 9, dtype=np.uint8), dtype="u8")
    with pytest.raises(DataError):
        render_png(bad, "classmap")
    two = grid_of(np.zeros((2, 3, 3), dtype=np.uint8), dtype="u8")
    with pytest.raises(ValueError):
        render_png(two, "classmap")


def test_grayscale_rounds_half_up():
    # 0.5/255 boundary cases: 127.5 rounds to 128, not banker's 127
    vals = np.array([[0.0, 0.5, 1.0, 2.0, -1.0]], dtype=np.float32)
    img = decode(render_png(grid_of(vals), "grayscale"))
    assert img[0, 0, 0] == 0
    assert img[0, 1, 0] == 128
    assert img[0, 2, 0] == 255
    assert img[0, 3, 0] == 255  # clamped above
    assert img[0, 4, 0] == 0  # clamped below
    assert np.all(img[..., 0] == img[..., 1]) and np.all(img[..., 1] == img[..., 2])


def test_nodata_renders_black():
    vals = np.full((2, 2), 1.0, dtype=np.float32)
    nodata = np.zeros((2, 2), dtype=bool)
    nodata[0, 1] = True
    img = decode(render_png(grid_of(vals, nodata=nodata), "grayscale"))
    assert tuple(img[0, 1]) == (0, 0, 0)
    assert tuple(img[0, 0]) == (255, 255, 255)

    codes = np.full((2, 2), 4, dtype=np.uint8)
    img2 = decode(render_png(grid_of(codes, dtype="u8", nodata=nodata), "classmap"))
    assert tuple(img2[0, 1]) == (0, 0, 0)
    assert tuple(img2[0, 0]) == CLASS_COLORS[4]


def test_rgb_takes_first_three_channels():
    data = np.zeros((4, 2, 2), dtype=np.float32)
    data[0] = 1.0
    data[1] = 0.25
    data[2] = 0.0
    data[3] = 0.9  # extra channel must be ignored
    img = decode(render_png(grid_of(data), "rgb"))
    assert tuple(img[0, 0]) == (255, 64, 0)
    with pytest.raises(ValueError):
        render_png(grid_of(np.zeros((2, 2, 2), dtype=np.float32)), "rgb")


def test_unknown_style_rejected():
    with pytest.raises(ValueError):
        render_png(grid_of(np.zeros((2, 2), dtype=np.float32)), "heatmap")


def test_render_is_deterministic_and_writes_file(tmp_path):
    codes = np.tile(np.arange(5, dtype=np.uint8), (4, 1))
    grid = grid_of(codes, dtype="u8")
    a = render_png(grid, "classmap")
    b = render_png(grid, "classmap")
    assert a == b
    out = tmp_path / "mask.png"
    write_png(out, grid, "classmap")
    assert out.read_bytes() == a
    assert decode(a).shape == (4, 5, 3)
