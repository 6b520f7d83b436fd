"""Slide rasters, manifests, and annotation files.

Desk scale works on flat single-resolution rasters (PNG or uncompressed
8-bit TIFF) loaded eagerly into memory; a pyramidal-format adapter can be
added behind Slide later without touching the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionMismatchError,
    FormatError,
    InputValidationError,
    MissingFileError,
)
from .geometry import Box

_SUPPORTED_SUFFIXES = {".png", ".tif", ".tiff"}

ANNOTATION_SOURCES = ("ground_truth", "human", "model")


@dataclass(frozen=True)
class Slide:
    """Immutable 8-bit RGB slide raster."""

    id: str
    pixels: np.ndarray  # (height, width, 3) uint8
    mpp: float | None = None

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InputValidationError(
                f"slide {self.id!r}: pixels must be (H, W, 3) uint8, got {px.shape} {px.dtype}"
            )
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InputValidationError(f"slide {self.id!r}: empty raster")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def bounds_box(self) -> Box:
        return Box(0, 0, self.width, self.height)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: Path
    width: int
    height: int
    mpp: float | None = None


@dataclass
class SlideAnnotation:
    """Labelled boxes for one slide from one source."""

    slide_id: str
    source: str
    boxes: list[Box] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.source not in ANNOTATION_SOURCES:
            raise InputValidationError(
                f"annotation source must be one of {ANNOTATION_SOURCES}, got {self.source!r}"
            )

    def validate_bounds(self, width: int, height: int) -> None:
        limit = Box(0, 0, width, height)
        for b in self.boxes:
            if not limit.contains(b):
                raise InputValidationError(
                    f"annotation box {b.as_tuple()} outside slide {self.slide_id!r} "
                    f"bounds {width}x{height}"
                )


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a slide manifest; relative slide paths resolve against it."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
        entries = []
        for rec in payload["slides"]:
            entries.append(
                ManifestEntry(
                    id=str(rec["id"]),
                    path=(path.parent / rec["path"]).resolve(),
                    width=int(rec["width"]),
                    height=int(rec["height"]),
                    mpp=float(rec["mpp"]) if rec.get("mpp") is not None else None,
                )
            )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from exc
    return entries


def save_manifest(path: str | Path, entries: list[dict]) -> None:
    payload = {"slides": entries}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_slide(path: str | Path, entry: ManifestEntry | None = None) -> Slide:
    """Decode a flat raster into a Slide, checking the manifest entry if given."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"slide file not found: {path}")
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise FormatError(f"unsupported slide format {path.suffix!r} for {path}")
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode slide {path}: {exc}") from exc

    slide_id = entry.id if entry is not None else path.stem
    mpp = entry.mpp if entry is not None else None
    slide = Slide(id=slide_id, pixels=pixels, mpp=mpp)
    if entry is not None and (slide.width != entry.width or slide.height != entry.height):
        raise DimensionMismatchError(
            f"slide {slide_id!r}: manifest says {entry.width}x{entry.height} "
            f"but file is {slide.width}x{slide.height}"
        )
    return slide


def write_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as PNG/TIFF; output bytes are deterministic."""
    Image.fromarray(pixels, mode="RGB").save(Path(path))


def load_annotation(
    path: str | Path, slide_size: tuple[int, int] | None = None
) -> SlideAnnotation:
    """Read annotation JSON; box bounds are checked when slide_size is given."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"annotation file not found: {path}")
    try:
        payload = json.loads(path.read_text())
        boxes = []
        for rec in payload["boxes"]:
            if rec.get("label", "roi") != "roi":
                raise ValueError(f"unsupported box label {rec.get('label')!r}")
            boxes.append(Box(int(rec["x0"]), int(rec["y0"]), int(rec["x1"]), int(rec["y1"])))
        ann = SlideAnnotation(
            slide_id=str(payload["slide_id"]), source=str(payload["source"]), boxes=boxes
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, InputValidationError):
            raise
        raise FormatError(f"malformed annotation {path}: {exc}") from exc
    if slide_size is not None:
        ann.validate_bounds(*slide_size)
    return ann


def save_annotation(path: str | Path, ann: SlideAnnotation) -> None:
    payload = {
        "slide_id": ann.slide_id,
        "source": ann.source,
        "boxes": [
            {"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1, "label": "roi"}
            for b in ann.boxes
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def downsample(slide: Slide | np.ndarray, factor: int) -> np.ndarray:
    """Box-filter downsample by an integer factor, round-half-up on block means.

    Output dims are ceil(size / factor); edge blocks average their partial
    contents. Integer arithmetic throughout, so results are bit-stable.
    """
    if factor < 1:
        raise InputValidationError(f"downsample factor must be >= 1, got {factor}")
    pixels = slide.pixels if isinstance(slide, Slide) else slide
    if factor == 1:
        return pixels.copy()
    h, w = pixels.shape[:2]
    ys = np.arange(0, h, factor)
    xs = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(pixels.astype(np.int64), ys, axis=0), xs, axis=1)
    bh = np.minimum(ys + factor, h) - ys
    bw = np.minimum(xs + factor, w) - xs
    counts = (bh[:, None] * bw[None, :])[:, :, None]
    # round-half-up of sums/counts without going through floats
    return ((2 * sums + counts) // (2 * counts)).astype(np.uint8)
