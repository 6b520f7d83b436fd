"""IoU labeling of proposals against ground truth and training-set export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIOError, InputValidationError
from .geometry import Box, iou
from .selective_search import RegionProposal
from .slide_io import Slide, SlideAnnotation, write_image
from .tiler import extract_patch, resize_to_input

LABEL_ROI = "roi"
LABEL_BACKGROUND = "background"
LABEL_IGNORED = "ignored"

INDEX_HEADER = ["path", "label", "slide_id", "x0", "y0", "x1", "y1", "max_iou"]


@dataclass(frozen=True)
class LabelThresholds:
    positive: float = 0.5
    negative: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.negative < self.positive <= 1.0:
            raise InputValidationError(
                f"need 0 <= negative < positive <= 1, got {self.negative}/{self.positive}"
            )


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray  # (input_size, input_size, 3) uint8
    label: str
    slide_id: str
    slide_box: Box
    max_iou: float


def label_proposals(
    proposals: list[RegionProposal],
    gt: SlideAnnotation,
    thresholds: LabelThresholds = LabelThresholds(),
) -> list[tuple[RegionProposal, str, float]]:
    """Assign roi/background/ignored by max IoU against the ground truth.

    Ground-truth boxes themselves are appended as roi entries so every
    annotated region yields at least one positive even when the proposer
    under-covers it.
    """
    out = []
    for prop in proposals:
        if prop.slide_box is None:
            raise InputValidationError("proposal lacks slide coordinates; run to_slide_coords")
        max_iou = max((iou(prop.slide_box, g) for g in gt.boxes), default=0.0)
        if max_iou >= thresholds.positive:
            label = LABEL_ROI
        elif max_iou <= thresholds.negative:
            label = LABEL_BACKGROUND
        else:
            label = LABEL_IGNORED
        out.append((prop, label, max_iou))
    for g in gt.boxes:
        pseudo = RegionProposal(local_box=g, birth_step=0, slide_id=gt.slide_id, slide_box=g)
        out.append((pseudo, LABEL_ROI, 1.0))
    return out


def make_examples(
    labeled: list[tuple[RegionProposal, str, float]],
    slide: Slide,
    input_size: int = 224,
) -> list[LabeledExample]:
    """Crop and resize the kept (non-ignored) labeled proposals."""
    out = []
    for prop, label, max_iou in labeled:
        if label == LABEL_IGNORED:
            continue
        crop = extract_patch(slide, prop.slide_box)
        out.append(
            LabeledExample(
                image=resize_to_input(crop, input_size),
                label=label,
                slide_id=slide.id,
                slide_box=prop.slide_box,
                max_iou=max_iou,
            )
        )
    return out


def export_dataset(
    examples: list[LabeledExample],
    out_dir: str | Path,
    balance_ratio: float = 3.0,
    seed: int = 0,
) -> Path:
    """Write PNG crops plus index.csv; returns the index path.

    Background examples are subsampled (seeded, order-preserving) to at most
    balance_ratio times the roi count. Identical inputs and seed produce
    byte-identical output.
    """
    if balance_ratio <= 0:
        raise InputValidationError(f"balance_ratio must be > 0, got {balance_ratio}")
    roi_count = sum(1 for e in examples if e.label == LABEL_ROI)
    if roi_count == 0:
        raise InputValidationError("no roi examples: dataset would be untrainable")

    bg_indices = [i for i, e in enumerate(examples) if e.label == LABEL_BACKGROUND]
    keep_bg = int(balance_ratio * roi_count)
    kept = set(range(len(examples))) - set(bg_indices)
    if len(bg_indices) > keep_bg:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(bg_indices), size=keep_bg, replace=False)
        kept |= {bg_indices[i] for i in sorted(chosen)}
    else:
        kept |= set(bg_indices)

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        counters: dict[str, int] = {}
        for i in sorted(kept):
            e = examples[i]
            n = counters.get(e.slide_id, 0)
            counters[e.slide_id] = n + 1
            rel = Path(e.slide_id) / f"{e.slide_id}_{n:05d}_{e.label}.png"
            (out_dir / e.slide_id).mkdir(exist_ok=True)
            write_image(out_dir / rel, e.image)
            b = e.slide_box
            rows.append(
                [rel.as_posix(), e.label, e.slide_id, b.x0, b.y0, b.x1, b.y1, repr(e.max_iou)]
            )
        index_path = out_dir / "index.csv"
        with open(index_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(INDEX_HEADER)
            writer.writerows(rows)
    except OSError as exc:
        raise DataIOError(f"dataset export failed under {out_dir}: {exc}") from exc
    return index_path
