"""Downsampled slide renderings with colored annotation rectangles."""

from __future__ import annotations

import numpy as np

from .errors import InputValidationError
from .slide_io import Slide, SlideAnnotation, downsample

OUTLINE_WIDTH = 2
REFERENCE_COLOR = (255, 0, 0)
MODEL_COLORS = [(0, 0, 255), (255, 255, 0)]
EXTRA_COLOR = (0, 200, 0)
MAX_SOURCES = 4


def default_factor(slide: Slide, max_side: int = 2048) -> int:
    """Smallest integer factor keeping the long side at or under max_side."""
    long_side = max(slide.width, slide.height)
    return max(1, -(-long_side // max_side))


def _assign_colors(annotations: list[SlideAnnotation]) -> list[tuple[int, int, int]]:
    colors = []
    model_seen = 0
    for ann in annotations:
        if ann.source in ("ground_truth", "human"):
            colors.append(REFERENCE_COLOR)
        elif model_seen < len(MODEL_COLORS):
            colors.append(MODEL_COLORS[model_seen])
            model_seen += 1
        else:
            colors.append(EXTRA_COLOR)
    return colors


def _scale(v: int, factor: int) -> int:
    # round-half-up of v / factor
    return (2 * v + factor) // (2 * factor)


def _draw_rect(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    h, w = img.shape[:2]
    x0 = max(0, min(x0, w - 1))
    y0 = max(0, min(y0, h - 1))
    x1 = max(x0 + 1, min(x1, w))
    y1 = max(y0 + 1, min(y1, h))
    t = OUTLINE_WIDTH
    img[y0 : min(y0 + t, y1), x0:x1] = color
    img[max(y1 - t, y0) : y1, x0:x1] = color
    img[y0:y1, x0 : min(x0 + t, x1)] = color
    img[y0:y1, max(x1 - t, x0) : x1] = color


def render_overlay(
    slide: Slide, annotations: list[SlideAnnotation], factor: int
) -> np.ndarray:
    """Downsample the slide and outline each annotation set in its own color.

    Reference sources (ground_truth, human) draw red; the first model source
    blue, the second yellow, anything further green. Box coordinates divide
    by the factor with round-half-up. Pure function of its inputs.
    """
    if factor < 1:
        raise InputValidationError(f"overlay factor must be >= 1, got {factor}")
    if len(annotations) > MAX_SOURCES:
        raise InputValidationError(
            f"at most {MAX_SOURCES} annotation sources per overlay, got {len(annotations)}"
        )
    for ann in annotations:
        if ann.slide_id != slide.id:
            raise InputValidationError(
                f"annotation for {ann.slide_id!r} cannot overlay slide {slide.id!r}"
            )
        ann.validate_bounds(slide.width, slide.height)

    img = downsample(slide, factor)
    for ann, color in zip(annotations, _assign_colors(annotations)):
        for b in ann.boxes:
            _draw_rect(
                img,
                _scale(b.x0, factor),
                _scale(b.y0, factor),
                _scale(b.x1, factor),
                _scale(b.y1, factor),
                color,
            )
    return img
