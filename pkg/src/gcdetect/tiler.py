"""Fixed-size non-overlapping tiling, center cropping, and patch resizing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputValidationError
from .geometry import Box
from .slide_io import Slide

log = logging.getLogger(__name__)

PAD_FILL = 255  # white, the usual slide background


@dataclass(frozen=True)
class TileFootprint:
    slide_id: str
    grid_row: int
    grid_col: int
    box: Box


@dataclass(frozen=True)
class Tile:
    slide_id: str
    grid_row: int
    grid_col: int
    box: Box
    pixels: np.ndarray


@dataclass(frozen=True)
class PipelineMode:
    """Base mode classifies whole tiles; center mode their centered crops."""

    name: str = "center"
    center_crop_size: int = 199

    def __post_init__(self) -> None:
        if self.name not in ("base", "center"):
            raise InputValidationError(f"mode must be 'base' or 'center', got {self.name!r}")

    def crop_offset(self, tile_size: int) -> int:
        if self.name == "base":
            return 0
        if self.center_crop_size >= tile_size:
            raise InputValidationError(
                f"center crop {self.center_crop_size} must be smaller than tile {tile_size}"
            )
        return (tile_size - self.center_crop_size) // 2

    def patch_size(self, tile_size: int) -> int:
        return tile_size if self.name == "base" else self.center_crop_size


def tile_grid(
    slide: Slide, tile_size: int, pad_edges: bool = False
) -> list[TileFootprint]:
    """Row-major tile footprints with zero overlap and zero gap.

    Right/bottom remainder strips are dropped unless pad_edges is set, in
    which case partial tiles are included and extraction fills past-edge
    pixels with white.
    """
    if tile_size < 1:
        raise InputValidationError(f"tile_size must be >= 1, got {tile_size}")
    if pad_edges:
        cols = -(-slide.width // tile_size)
        rows = -(-slide.height // tile_size)
    else:
        cols = slide.width // tile_size
        rows = slide.height // tile_size
    if rows == 0 or cols == 0:
        log.warning(
            "slide %s (%dx%d) is smaller than tile size %d; empty grid",
            slide.id,
            slide.width,
            slide.height,
            tile_size,
        )
        return []
    out = []
    for r in range(rows):
        for c in range(cols):
            x0, y0 = c * tile_size, r * tile_size
            out.append(
                TileFootprint(slide.id, r, c, Box(x0, y0, x0 + tile_size, y0 + tile_size))
            )
    return out


def extract_patch(slide: Slide, box: Box, pad_edges: bool = False) -> np.ndarray:
    """Pixel-exact copy of a slide region; out-of-bounds is rejected unless padding."""
    inside = slide.bounds_box().contains(box)
    if not inside and not pad_edges:
        raise InputValidationError(
            f"box {box.as_tuple()} outside slide {slide.id!r} "
            f"bounds {slide.width}x{slide.height}"
        )
    if inside:
        return slide.pixels[box.y0 : box.y1, box.x0 : box.x1].copy()
    if box.x0 < 0 or box.y0 < 0:
        raise InputValidationError(f"box {box.as_tuple()} has negative origin")
    out = np.full((box.height, box.width, 3), PAD_FILL, dtype=np.uint8)
    y1 = min(box.y1, slide.height)
    x1 = min(box.x1, slide.width)
    if y1 > box.y0 and x1 > box.x0:
        out[: y1 - box.y0, : x1 - box.x0] = slide.pixels[box.y0 : y1, box.x0 : x1]
    return out


def load_tile(slide: Slide, fp: TileFootprint, pad_edges: bool = False) -> Tile:
    return Tile(fp.slide_id, fp.grid_row, fp.grid_col, fp.box,
                extract_patch(slide, fp.box, pad_edges=pad_edges))


def center_crop(tile: Tile, crop_size: int) -> tuple[np.ndarray, Box]:
    """Centered crop of a tile; returns pixels plus the crop's slide-coordinate box."""
    tile_size = tile.box.width
    if crop_size > tile_size:
        raise InputValidationError(
            f"crop_size {crop_size} exceeds tile size {tile_size}"
        )
    off = (tile_size - crop_size) // 2
    box = Box(
        tile.box.x0 + off,
        tile.box.y0 + off,
        tile.box.x0 + off + crop_size,
        tile.box.y0 + off + crop_size,
    )
    pixels = tile.pixels[off : off + crop_size, off : off + crop_size].copy()
    return pixels, box


def _axis_positions(src: int, dst: int) -> np.ndarray:
    # corner-aligned sampling: endpoints map to endpoints
    if dst == 1 or src == 1:
        return np.zeros(dst, dtype=np.float64)
    return np.linspace(0.0, src - 1, dst)


def resize_to_input(raster: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to target x target, corner-aligned, round-half-up to uint8."""
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise InputValidationError(f"expected (H, W, 3) raster, got {raster.shape}")
    h, w = raster.shape[:2]
    if h < 1 or w < 1 or target < 1:
        raise InputValidationError("resize needs non-empty source and target")
    if h == target and w == target:
        return raster.astype(np.uint8, copy=True)

    ys = _axis_positions(h, target)
    xs = _axis_positions(w, target)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    src = raster.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)
