"""Synthetic slide sets: pale pink tissue noise with dark elliptical blobs.

Stands in for private clinical slides. Blobs are placed fully inside the
center-crop window of a tile so both pipeline modes can recover them; the
dark-on-pale contrast matches the stub classifier's heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputValidationError
from .geometry import Box
from .slide_io import Slide, SlideAnnotation, save_annotation, save_manifest, write_image

BACKGROUND = (230, 180, 190)
NOISE_AMPLITUDE = 5
NOISE_GRID = 64  # control-point spacing of the smooth noise field
BLOB_COUNT_RANGE = (3, 8)
BLOB_INTENSITY_RANGE = (60, 100)
BLOB_SEMI_AXIS_RANGE = (40, 79)
PLACEMENT_MARGIN = 4


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    count: int = 10
    size: int = 1024
    tile_size: int = 244
    center_size: int = 199

    def __post_init__(self) -> None:
        if self.count < 1:
            raise InputValidationError(f"count must be >= 1, got {self.count}")
        if self.size < self.tile_size:
            raise InputValidationError(
                f"size {self.size} must fit at least one {self.tile_size}px tile"
            )


def _texture_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth per-pixel noise in [-NOISE_AMPLITUDE, NOISE_AMPLITUDE].

    Spatially correlated like tissue texture: a coarse grid of uniform
    offsets, bilinearly upsampled and rounded. Neighboring pixels differ by
    at most one level, so the background segments as a handful of regions
    instead of thousands of speckle fragments.
    """
    cells = size // NOISE_GRID + 2
    control = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(cells, cells))
    pos = np.arange(size) / NOISE_GRID
    idx = pos.astype(np.int64)
    frac = pos - idx
    top = control[idx][:, idx] * (1 - frac)[None, :] + control[idx][:, idx + 1] * frac[None, :]
    bot = control[idx + 1][:, idx] * (1 - frac)[None, :] + control[idx + 1][:, idx + 1] * frac[None, :]
    field = top * (1 - frac)[:, None] + bot * frac[:, None]
    return np.floor(field + 0.5).astype(np.int16)


def _draw_ellipse(pixels: np.ndarray, cx: int, cy: int, ax: int, ay: int, value: int) -> Box:
    ys = np.arange(cy - ay, cy + ay + 1)
    xs = np.arange(cx - ax, cx + ax + 1)
    gx = ((xs - cx) / ax) ** 2
    gy = ((ys - cy) / ay) ** 2
    mask = gy[:, None] + gx[None, :] <= 1.0
    region = pixels[cy - ay : cy + ay + 1, cx - ax : cx + ax + 1]
    region[mask] = value
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return Box(
        cx - ax + int(cols[0]),
        cy - ay + int(rows[0]),
        cx - ax + int(cols[-1]) + 1,
        cy - ay + int(rows[-1]) + 1,
    )


def generate_slide(index: int, config: SynthConfig) -> tuple[Slide, SlideAnnotation]:
    """One deterministic synthetic slide with its ground-truth boxes."""
    rng = np.random.default_rng([config.seed, index])
    size = config.size
    base = np.empty((size, size, 3), dtype=np.int16)
    base[:, :] = BACKGROUND
    base += _texture_noise(rng, size)[:, :, None]  # background texture only

    grid = size // config.tile_size
    offset = (config.tile_size - config.center_size) // 2
    count = min(int(rng.integers(BLOB_COUNT_RANGE[0], BLOB_COUNT_RANGE[1] + 1)), grid * grid)
    cells = rng.choice(grid * grid, size=count, replace=False)

    boxes = []
    for cell in cells:
        row, col = int(cell) // grid, int(cell) % grid
        ax = int(rng.integers(BLOB_SEMI_AXIS_RANGE[0], BLOB_SEMI_AXIS_RANGE[1] + 1))
        ay = int(rng.integers(BLOB_SEMI_AXIS_RANGE[0], BLOB_SEMI_AXIS_RANGE[1] + 1))
        win_x = col * config.tile_size + offset
        win_y = row * config.tile_size + offset
        cx = int(rng.integers(win_x + PLACEMENT_MARGIN + ax,
                              win_x + config.center_size - PLACEMENT_MARGIN - ax + 1))
        cy = int(rng.integers(win_y + PLACEMENT_MARGIN + ay,
                              win_y + config.center_size - PLACEMENT_MARGIN - ay + 1))
        value = int(rng.integers(BLOB_INTENSITY_RANGE[0], BLOB_INTENSITY_RANGE[1] + 1))
        boxes.append(_draw_ellipse(base, cx, cy, ax, ay, value))

    pixels = np.clip(base, 0, 255).astype(np.uint8)

    slide_id = f"slide_{index:04d}"
    boxes.sort(key=Box.sort_key)
    slide = Slide(id=slide_id, pixels=pixels)
    return slide, SlideAnnotation(slide_id, "ground_truth", boxes)


def generate_slide_set(out_dir: str | Path, config: SynthConfig) -> Path:
    """Write slides, manifest, and ground-truth annotations; returns manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "slides").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(config.count):
        slide, annotation = generate_slide(i, config)
        write_image(out_dir / "slides" / f"{slide.id}.png", slide.pixels)
        save_annotation(out_dir / "annotations" / f"{slide.id}.json", annotation)
        entries.append(
            {
                "id": slide.id,
                "path": f"slides/{slide.id}.png",
                "width": slide.width,
                "height": slide.height,
            }
        )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest_path, entries)
    return manifest_path
