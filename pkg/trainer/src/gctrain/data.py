"""Loads the detector's exported dataset (index.csv + PNG crops)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

LABEL_TO_CLASS = {"background": 0, "roi": 1}
CLASS_ORDER = ["background", "roi"]

EXPECTED_HEADER = ["path", "label", "slide_id", "x0", "y0", "x1", "y1", "max_iou"]


class DatasetError(RuntimeError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, 224, 224, 3) uint8
    labels: np.ndarray  # (N,) int64, 0 = background, 1 = roi
    paths: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def load_dataset(index_path: str | Path) -> Dataset:
    """Read every crop referenced by index.csv, in row order."""
    index_path = Path(index_path)
    if not index_path.is_file():
        raise DatasetError(f"dataset index not found: {index_path}")
    root = index_path.parent
    images = []
    labels = []
    paths = []
    with open(index_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EXPECTED_HEADER:
            raise DatasetError(
                f"unexpected index header {header}; want {EXPECTED_HEADER}"
            )
        for row in reader:
            rel, label = row[0], row[1]
            if label not in LABEL_TO_CLASS:
                raise DatasetError(f"unknown label {label!r} in {index_path}")
            with Image.open(root / rel) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
            if arr.shape != (224, 224, 3):
                raise DatasetError(f"crop {rel} has shape {arr.shape}, want (224, 224, 3)")
            images.append(arr)
            labels.append(LABEL_TO_CLASS[label])
            paths.append(rel)
    if not images:
        raise DatasetError(f"dataset index {index_path} holds no rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels_arr)) < 2:
        raise DatasetError("single-label dataset: training needs both classes")
    return Dataset(images=np.stack(images), labels=labels_arr, paths=paths)
