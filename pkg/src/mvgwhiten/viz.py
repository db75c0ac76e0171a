"""Heatmap rendering: percentile color scales, bilinear upsampling, inferno
colorization, alpha blending, and titled PNG figure pages.

Scales always start at zero; the maximum is a percentile statistic taken
either per component, pooled across all components, or over all score-map
values of a split. Upsampling uses the half-pixel-center convention (output
pixel (i, j) samples the source at ((i + 0.5) * H / H_t - 0.5, ...)) with
edge clamping, so interpolated values never leave the source value range.
Rendering is a pure function of its inputs; PNG encoding carries no
timestamps or variable metadata, so identical inputs give identical bytes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import DegenerateScaleError, ShapeError
from .inferno import INFERNO_LUT

STRATEGIES = ("per_component", "cross_component", "score_map")

DEFAULT_PERCENTILE = 99.0
DEFAULT_ALPHA = 0.5
DEFAULT_TARGET_SIZE = (224, 224)

_MARGIN = 8
_LABEL_BAND = 16
_HEADER_BAND = 28


@dataclass
class ColorScale:
    """A [0, vmax] color range; vmin is pinned at zero."""

    vmax: float
    strategy: str
    percentile: float = DEFAULT_PERCENTILE
    split: str = "test"
    vmin: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.vmax > 0:
            raise DegenerateScaleError(f"vmax must be positive, got {self.vmax}")
        if self.vmin != 0.0:
            raise ValueError("vmin is fixed at zero")


@dataclass
class RenderSpec:
    """Geometry and blending parameters for heatmap tiles."""

    alpha: float = DEFAULT_ALPHA
    target_size: tuple[int, int] = DEFAULT_TARGET_SIZE
    colormap: np.ndarray = field(default_factory=lambda: INFERNO_LUT)
    interpolation: str = "bilinear"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.colormap.shape != (256, 3):
            raise ShapeError(f"colormap LUT must be 256 x 3, got {self.colormap.shape}")


@dataclass
class FigurePage:
    """Rows of labeled, equally sized RGB tiles under one header line."""

    header: str
    rows: list[list[tuple[str, np.ndarray]]]

    def tile_size(self) -> tuple[int, int]:
        sizes = {tile.shape[:2] for row in self.rows for _, tile in row}
        if len(sizes) != 1:
            raise ShapeError(f"all tiles must share one size, got {sorted(sizes)}")
        return next(iter(sizes))


def color_scale(
    values,
    strategy: str,
    percentile: float = DEFAULT_PERCENTILE,
    split: str = "test",
) -> ColorScale:
    """Build a scale whose vmax is a percentile of the given value pool.

    ``values`` may be one array or a collection of arrays (pooled). For the
    per_component strategy pass that single component's values; for
    cross_component pass all components' values of the split; for score_map
    pass the split's score-map values.
    """
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    if isinstance(values, np.ndarray):
        pool = values.ravel()
    else:
        parts = [np.asarray(v, dtype=np.float64).ravel() for v in values]
        if not parts:
            raise ValueError("empty value collection")
        pool = np.concatenate(parts)
    if pool.size == 0:
        raise ValueError("cannot build a color scale from empty values")
    if not np.isfinite(pool).all():
        raise ValueError("color scale values must be finite")
    vmax = float(np.percentile(pool, percentile))
    if vmax <= 0:
        raise DegenerateScaleError(
            f"{strategy} scale degenerates: percentile {percentile} is {vmax}"
        )
    return ColorScale(vmax=vmax, strategy=strategy, percentile=percentile, split=split)


def upsample_bilinear(map2d: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample one H x W map to target size, half-pixel centers."""
    map2d = np.asarray(map2d, dtype=np.float64)
    if map2d.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got rank {map2d.ndim}")
    return upsample_batch(map2d[None], target)[0]


def upsample_batch(maps: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample a B x H x W batch to B x H_t x W_t."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ShapeError(f"expected B x H x W maps, got rank {maps.ndim}")
    h, w = maps.shape[1:]
    h_t, w_t = int(target[0]), int(target[1])
    if (h_t, w_t) == (h, w):
        return maps.copy()

    src_y = np.clip((np.arange(h_t) + 0.5) * (h / h_t) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(w_t) + 0.5) * (w / w_t) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[:, None]
    wx = (src_x - x0)[None, :]

    rows0 = maps[:, y0]
    rows1 = maps[:, y1]
    top = rows0[:, :, x0] * (1 - wx) + rows0[:, :, x1] * wx
    bottom = rows1[:, :, x0] * (1 - wx) + rows1[:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def apply_colormap(map2d: np.ndarray, scale: ColorScale, lut: np.ndarray | None = None) -> np.ndarray:
    """Map values through the 256-entry LUT: index = round(clamp(v/vmax) * 255)."""
    lut = INFERNO_LUT if lut is None else lut
    map2d = np.asarray(map2d, dtype=np.float64)
    if not np.isfinite(map2d).all():
        raise ValueError("heatmap values must be finite")
    t = np.clip(map2d / scale.vmax, 0.0, 1.0)
    idx = np.rint(t * 255).astype(np.intp)
    return lut[idx]


def alpha_blend(base: np.ndarray, heat: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Per-channel convex blend of two RGB images, rounded and saturated to 8-bit."""
    base = np.asarray(base)
    heat = np.asarray(heat)
    if base.shape != heat.shape:
        raise ShapeError(f"image sizes differ: {base.shape} vs {heat.shape}")
    mixed = (1.0 - alpha) * base.astype(np.float64) + alpha * heat.astype(np.float64)
    return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)


def render_tile(
    heat_map: np.ndarray,
    base_rgb: np.ndarray,
    scale: ColorScale,
    spec: RenderSpec,
) -> np.ndarray:
    """One blended heatmap tile: upsample, colorize, blend over the input image."""
    upsampled = upsample_bilinear(heat_map, spec.target_size)
    heat_rgb = apply_colormap(upsampled, scale, lut=spec.colormap)
    if base_rgb.shape[:2] != tuple(spec.target_size):
        raise ShapeError(
            f"base image is {base_rgb.shape[:2]}, target is {spec.target_size}"
        )
    return alpha_blend(base_rgb, heat_rgb, spec.alpha)


def page_dimensions(n_rows: int, n_cols: int, tile_size: tuple[int, int]) -> tuple[int, int]:
    """Pixel (width, height) of a page holding an n_rows x n_cols tile grid."""
    tile_h, tile_w = tile_size
    width = _MARGIN + n_cols * (tile_w + _MARGIN)
    height = _HEADER_BAND + _MARGIN + n_rows * (_LABEL_BAND + tile_h + _MARGIN)
    return width, height


def compose_page(page: FigurePage) -> Image.Image:
    """Assemble labeled tiles into a single annotated image."""
    if not page.rows or not page.rows[0]:
        raise ValueError("page has no tiles")
    tile_h, tile_w = page.tile_size()
    n_rows = len(page.rows)
    n_cols = max(len(row) for row in page.rows)
    width, height = page_dimensions(n_rows, n_cols, (tile_h, tile_w))

    canvas = Image.new("RGB", (width, height), (20, 20, 20))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    draw.text((_MARGIN, (_HEADER_BAND - 10) // 2), page.header, fill=(235, 235, 235), font=font)

    y = _HEADER_BAND + _MARGIN
    for row in page.rows:
        x = _MARGIN
        for label, tile in row:
            draw.text((x, y + 2), label, fill=(200, 200, 200), font=font)
            canvas.paste(Image.fromarray(tile, mode="RGB"), (x, y + _LABEL_BAND))
            x += tile_w + _MARGIN
        y += _LABEL_BAND + tile_h + _MARGIN
    return canvas


def encode_png(image: Image.Image) -> bytes:
    """Deterministic PNG bytes: fixed compression, no timestamps or metadata."""
    buf = io.BytesIO()
    image.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def render_page(page: FigurePage, path: str | Path | None = None) -> bytes:
    """Compose a figure page and return (optionally also write) its PNG bytes."""
    data = encode_png(compose_page(page))
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return data
