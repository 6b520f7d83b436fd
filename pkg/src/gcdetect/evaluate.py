"""Detection scoring: pixel-union slide IoU and per-ROI match/discrepancy counts.

Slide-level IoU treats each annotation set as the union of its boxes'
pixels and is computed exactly on a coordinate-compressed grid. ROI
matching is greedy one-to-one by descending pairwise IoU; a reference or
predicted box left unmatched counts as one discrepant ROI.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputValidationError
from .geometry import Box, iou
from .slide_io import SlideAnnotation


@dataclass(frozen=True)
class MatchPair:
    ref_box: Box
    pred_box: Box
    iou: float


@dataclass
class SlideReport:
    slide_id: str
    slide_iou: float
    ref_count: int
    pred_count: int
    matched: int
    pairs: list[MatchPair] = field(default_factory=list)
    covered_fraction: float | None = None

    @property
    def ref_only(self) -> int:
        return self.ref_count - self.matched

    @property
    def pred_only(self) -> int:
        return self.pred_count - self.matched

    @property
    def discrepant(self) -> int:
        return self.ref_only + self.pred_only


def _union_mask(boxes: list[Box], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    mask = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for b in boxes:
        x0 = np.searchsorted(xs, b.x0)
        x1 = np.searchsorted(xs, b.x1)
        y0 = np.searchsorted(ys, b.y0)
        y1 = np.searchsorted(ys, b.y1)
        mask[y0:y1, x0:x1] = True
    return mask


def slide_iou(pred: list[Box], ref: list[Box], slide_size: tuple[int, int]) -> float:
    """Exact pixel-set IoU of the two box unions via coordinate compression."""
    width, height = slide_size
    limit = Box(0, 0, width, height)
    for b in [*pred, *ref]:
        if not limit.contains(b):
            raise InputValidationError(f"box {b.as_tuple()} outside slide {width}x{height}")
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    xs = np.unique([v for b in [*pred, *ref] for v in (b.x0, b.x1)])
    ys = np.unique([v for b in [*pred, *ref] for v in (b.y0, b.y1)])
    cell_area = (np.diff(ys)[:, None] * np.diff(xs)[None, :]).astype(np.int64)
    mp = _union_mask(pred, xs, ys)
    mr = _union_mask(ref, xs, ys)
    inter = int(cell_area[mp & mr].sum())
    union = int(cell_area[mp | mr].sum())
    return inter / union


def greedy_match(ref: list[Box], pred: list[Box], match_iou: float) -> list[MatchPair]:
    """One-to-one pairs by descending IoU; ties break on canonical box order."""
    ref_sorted = sorted(ref, key=Box.sort_key)
    pred_sorted = sorted(pred, key=Box.sort_key)
    candidates = []
    for i, r in enumerate(ref_sorted):
        for j, p in enumerate(pred_sorted):
            v = iou(r, p)
            if v >= match_iou:
                candidates.append((-v, i, j))
    candidates.sort()
    used_ref: set[int] = set()
    used_pred: set[int] = set()
    pairs = []
    for neg, i, j in candidates:
        if i in used_ref or j in used_pred:
            continue
        used_ref.add(i)
        used_pred.add(j)
        pairs.append(MatchPair(ref_box=ref_sorted[i], pred_box=pred_sorted[j], iou=-neg))
    return pairs


def match_report(
    pred: SlideAnnotation,
    ref: SlideAnnotation,
    slide_size: tuple[int, int],
    match_iou: float = 0.5,
) -> SlideReport:
    """Per-slide report with pixel-union IoU and match/discrepancy counts."""
    if not 0.0 < match_iou <= 1.0:
        raise InputValidationError(f"match_iou must be in (0, 1], got {match_iou}")
    if pred.slide_id != ref.slide_id:
        raise InputValidationError(
            f"annotation slide ids differ: {pred.slide_id!r} vs {ref.slide_id!r}"
        )
    pairs = greedy_match(ref.boxes, pred.boxes, match_iou)
    return SlideReport(
        slide_id=ref.slide_id,
        slide_iou=slide_iou(pred.boxes, ref.boxes, slide_size),
        ref_count=len(ref.boxes),
        pred_count=len(pred.boxes),
        matched=len(pairs),
        pairs=pairs,
    )


@dataclass
class Summary:
    mean_slide_iou: float
    ref_total: int
    pred_total: int
    matched_total: int
    discrepant_total: int
    recall: float
    reports: list[SlideReport]


def aggregate_report(reports: list[SlideReport]) -> Summary:
    """Mean slide IoU plus column sums over per-slide reports."""
    if not reports:
        raise InputValidationError("cannot aggregate an empty report list")
    ref_total = sum(r.ref_count for r in reports)
    matched_total = sum(r.matched for r in reports)
    return Summary(
        mean_slide_iou=sum(r.slide_iou for r in reports) / len(reports),
        ref_total=ref_total,
        pred_total=sum(r.pred_count for r in reports),
        matched_total=matched_total,
        discrepant_total=sum(r.discrepant for r in reports),
        recall=matched_total / ref_total if ref_total else 1.0,
        reports=list(reports),
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def render_mode_table(rows: dict[str, float]) -> str:
    """CSV with one (mode, mean_iou) row per pipeline mode, sorted by mode."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["mode", "mean_iou"])
    for mode in sorted(rows):
        writer.writerow([mode, f"{rows[mode]:.6f}"])
    return buf.getvalue()


def render_discrepancy_table(summary: Summary) -> str:
    """CSV of per-specimen totals and discrepancies, plus a Total row."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["specimen", "ref_total", "pred_total", "discrepant"])
    for r in summary.reports:
        writer.writerow([r.slide_id, r.ref_count, r.pred_count, r.discrepant])
    writer.writerow(["Total", summary.ref_total, summary.pred_total, summary.discrepant_total])
    return buf.getvalue()


def summary_payload(summary: Summary, mode: str | None = None) -> dict:
    payload = {
        "mode": mode,
        "mean_slide_iou": summary.mean_slide_iou,
        "ref_total": summary.ref_total,
        "pred_total": summary.pred_total,
        "matched_total": summary.matched_total,
        "discrepant_total": summary.discrepant_total,
        "recall": summary.recall,
        "slide_iou_definition": "pixel-union IoU per slide, averaged across slides",
        "discrepancy_definition": "unmatched reference + unmatched predicted ROIs "
        "under greedy one-to-one IoU matching",
        "slides": [
            {
                "slide_id": r.slide_id,
                "slide_iou": r.slide_iou,
                "ref_count": r.ref_count,
                "pred_count": r.pred_count,
                "matched": r.matched,
                "ref_only": r.ref_only,
                "pred_only": r.pred_only,
                "discrepant": r.discrepant,
                "covered_fraction": r.covered_fraction,
                "pairs": [
                    {
                        "ref_box": list(p.ref_box.as_tuple()),
                        "pred_box": list(p.pred_box.as_tuple()),
                        "iou": p.iou,
                    }
                    for p in r.pairs
                ],
            }
            for r in summary.reports
        ],
    }
    return payload


def render_report_json(summary: Summary, mode: str | None = None) -> str:
    return json.dumps(summary_payload(summary, mode), indent=2, sort_keys=True) + "\n"
