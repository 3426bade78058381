"""Signed heatmap rendering and PPM/PNG output.

Signed maps use a diverging blue-white-red colormap anchored symmetrically
at max|v| (negating the map swaps the red and blue channels exactly);
non-negative maps use a white-to-black sequential map.  PPM (P6, binary,
maxval 255) is the bit-exact output format; PNG is a convenience export.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, FormatError, IoError

STYLE_DIVERGING = "diverging"
STYLE_SEQUENTIAL = "sequential"

SEPARATOR_RGB = (0, 0, 0)
FILL_RGB = (255, 255, 255)


@dataclass
class SignedMapImage:
    """A per-pixel signed map together with its rendered RGB form."""

    values: np.ndarray = field(repr=False)
    rgb: np.ndarray = field(repr=False)
    style: str = STYLE_DIVERGING

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def render_map(v, shape=(28, 28), style: str = STYLE_DIVERGING) -> SignedMapImage:
    """Render a flat map as an RGB heatmap of the given (height, width).

    Diverging style: zero is white, positive red, negative blue, scaled by
    max|v| (an all-zero map is uniformly white).  Sequential style requires
    non-negative values and darkens with magnitude.  Style is always chosen
    by the caller, never inferred from the data.
    """
    v = np.asarray(v, dtype=np.float64)
    height, width = int(shape[0]), int(shape[1])
    if v.ndim != 1 or height * width != v.shape[0]:
        raise DimensionError(f"cannot arrange {v.shape} into {height}x{width}")
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite map values")
    if style not in (STYLE_DIVERGING, STYLE_SEQUENTIAL):
        raise DomainError(f"unknown style {style!r}")
    if style == STYLE_SEQUENTIAL and v.min() < 0.0:
        raise DomainError("sequential style is for non-negative maps")

    grid = v.reshape(height, width)
    peak = float(np.max(np.abs(grid)))
    rgb = np.full((height, width, 3), 255, dtype=np.uint8)
    if peak > 0.0:
        level = np.rint(255.0 * np.abs(grid) / peak).astype(np.uint8)
        if style == STYLE_DIVERGING:
            positive = grid >= 0.0
            faded = (255 - level)
            rgb[..., 0] = np.where(positive, 255, faded)
            rgb[..., 1] = faded
            rgb[..., 2] = np.where(positive, faded, 255)
        else:
            rgb[..., 0] = rgb[..., 1] = rgb[..., 2] = 255 - level
    return SignedMapImage(grid.copy(), rgb, style)


def montage(images, grid) -> np.ndarray:
    """Arrange images row-major into a (rows, cols) grid with 1-px black
    separators between and around all cells; unused cells stay white."""
    if not images:
        raise DomainError("montage needs at least one image")
    rows, cols = int(grid[0]), int(grid[1])
    if rows < 1 or cols < 1 or len(images) > rows * cols:
        raise DimensionError(f"{len(images)} images do not fit a {rows}x{cols} grid")
    tiles = [im.rgb if isinstance(im, SignedMapImage) else np.asarray(im) for im in images]
    h, w = tiles[0].shape[:2]
    for t in tiles:
        if t.shape != (h, w, 3):
            raise DimensionError("montage tiles must share one (h, w, 3) shape")
    out = np.empty((rows * h + rows + 1, cols * w + cols + 1, 3), dtype=np.uint8)
    out[...] = SEPARATOR_RGB
    for idx in range(rows * cols):
        r, c = divmod(idx, cols)
        top = 1 + r * (h + 1)
        left = 1 + c * (w + 1)
        cell = tiles[idx] if idx < len(tiles) else FILL_RGB
        out[top : top + h, left : left + w] = cell
    return out


def write_ppm(path, rgb) -> None:
    """Binary P6 with maxval 255; byte-for-byte deterministic."""
    rgb = _as_rgb(rgb)
    height, width = rgb.shape[:2]
    try:
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (width, height))
            f.write(np.ascontiguousarray(rgb).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    width, height, maxval = (int(x) for x in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after the header
    pixels = np.frombuffer(data, dtype=np.uint8, count=height * width * 3, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def write_png(path, rgb) -> None:
    from PIL import Image

    rgb = _as_rgb(rgb)
    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_image(path, image) -> None:
    """Dispatch on extension: .ppm (golden format) or .png (convenience)."""
    name = str(path).lower()
    if name.endswith(".ppm"):
        write_ppm(path, image)
    elif name.endswith(".png"):
        write_png(path, image)
    else:
        raise DomainError(f"unsupported image extension in {path!r}")


def _as_rgb(image) -> np.ndarray:
    rgb = image.rgb if isinstance(image, SignedMapImage) else np.asarray(image)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DimensionError(f"expected (h, w, 3) uint8 pixels, got {rgb.shape} {rgb.dtype}")
    return rgb
