import numpy as np
import pytest

from discrepancy_fixture import EXPECTED_TOTAL, SPECIMEN_ROWS, build_all
from gcdetect.errors import InputValidationError
from gcdetect.evaluate import (
    SlideReport,
    aggregate_report,
    greedy_match,
    match_report,
    render_discrepancy_table,
    render_mode_table,
    render_report_json,
    slide_iou,
)
from gcdetect.geometry import Box
from gcdetect.slide_io import SlideAnnotation


def bitmap_slide_iou(pred, ref, slide_size):
    """Oracle: rasterize both unions on the full pixel grid and count."""
    w, h = slide_size
    mp = np.zeros((h, w), dtype=bool)
    mr = np.zeros((h, w), dtype=bool)
    for b in pred:
        mp[b.y0 : b.y1, b.x0 : b.x1] = True
    for b in ref:
        mr[b.y0 : b.y1, b.x0 : b.x1] = True
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    return np.count_nonzero(mp & mr) / np.count_nonzero(mp | mr)


def random_boxes(rng, n, size=256):
    out = []
    for _ in range(n):
        x0 = int(rng.integers(0, size - 2))
        y0 = int(rng.integers(0, size - 2))
        x1 = int(rng.integers(x0 + 1, size))
        y1 = int(rng.integers(y0 + 1, size))
        out.append(Box(x0, y0, x1, y1))
    return out


class TestSlideIou:
    def test_identical_lists(self):
        boxes = [Box(0, 0, 10, 10), Box(50, 50, 80, 90)]
        assert slide_iou(boxes, boxes, (256, 256)) == 1.0

    def test_pred_adds_disjoint_equal_area(self):
        ref = [Box(0, 0, 10, 10)]
        pred = [Box(0, 0, 10, 10), Box(100, 100, 110, 110)]
        assert slide_iou(pred, ref, (256, 256)) == 0.5

    def test_double_cover_counts_once(self):
        pred = [Box(0, 0, 10, 10), Box(0, 0, 10, 10)]
        assert slide_iou(pred, [Box(0, 0, 10, 10)], (256, 256)) == 1.0

    def test_both_empty(self):
        assert slide_iou([], [], (64, 64)) == 1.0

    def test_one_empty(self):
        assert slide_iou([Box(0, 0, 5, 5)], [], (64, 64)) == 0.0
        assert slide_iou([], [Box(0, 0, 5, 5)], (64, 64)) == 0.0

    def test_out_of_bounds_rejected(self):
        with pytest.raises(InputValidationError):
            slide_iou([Box(0, 0, 300, 10)], [], (256, 256))

    def test_matches_bitmap_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            pred = random_boxes(rng, int(rng.integers(0, 6)))
            ref = random_boxes(rng, int(rng.integers(0, 6)))
            assert slide_iou(pred, ref, (256, 256)) == bitmap_slide_iou(pred, ref, (256, 256))

    def test_symmetric(self):
        rng = np.random.default_rng(23)
        pred = random_boxes(rng, 4)
        ref = random_boxes(rng, 3)
        assert slide_iou(pred, ref, (256, 256)) == slide_iou(ref, pred, (256, 256))


class TestMatchReport:
    def _ann(self, source, boxes, slide_id="s"):
        return SlideAnnotation(slide_id, source, boxes)

    def test_identical_annotations(self):
        boxes = [Box(0, 0, 10, 10), Box(40, 40, 60, 60), Box(100, 0, 130, 30)]
        rep = match_report(
            self._ann("model", boxes), self._ann("human", list(boxes)), (256, 256)
        )
        assert rep.matched == 3
        assert rep.discrepant == 0
        assert rep.slide_iou == 1.0

    def test_counts_satisfy_invariants(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pred = self._ann("model", random_boxes(rng, int(rng.integers(0, 8))))
            ref = self._ann("human", random_boxes(rng, int(rng.integers(0, 8))))
            rep = match_report(pred, ref, (256, 256))
            assert rep.matched + rep.ref_only == rep.ref_count
            assert rep.matched + rep.pred_only == rep.pred_count
            assert rep.discrepant == rep.ref_only + rep.pred_only
            assert all(p.iou >= 0.5 for p in rep.pairs)

    def test_greedy_prefers_highest_iou(self):
        ref = [Box(0, 0, 10, 10)]
        pred = [Box(0, 0, 10, 9), Box(0, 0, 10, 10)]
        pairs = greedy_match(ref, pred, 0.5)
        assert len(pairs) == 1
        assert pairs[0].pred_box == Box(0, 0, 10, 10)
        assert pairs[0].iou == 1.0

    def test_matching_is_one_to_one(self):
        ref = [Box(0, 0, 10, 10), Box(0, 0, 10, 11)]
        pred = [Box(0, 0, 10, 10)]
        pairs = greedy_match(ref, pred, 0.5)
        assert len(pairs) == 1

    def test_permutation_invariant(self):
        rng = np.random.default_rng(9)
        ref = random_boxes(rng, 6)
        pred = random_boxes(rng, 6)
        a = greedy_match(ref, pred, 0.3)
        b = greedy_match(list(reversed(ref)), list(reversed(pred)), 0.3)
        assert a == b

    def test_slide_id_mismatch_rejected(self):
        with pytest.raises(InputValidationError):
            match_report(
                self._ann("model", [], slide_id="a"),
                self._ann("human", [], slide_id="b"),
                (64, 64),
            )

    def test_specimen_2_fixture(self):
        (pred, ref), size = build_all()[1]
        rep = match_report(pred, ref, size)
        assert (rep.ref_count, rep.pred_count, rep.discrepant) == (8, 8, 0)


class TestAggregate:
    def test_single_report_passthrough(self):
        rep = SlideReport("s", 0.8, 3, 3, 3)
        summary = aggregate_report([rep])
        assert summary.mean_slide_iou == 0.8
        assert (summary.ref_total, summary.pred_total, summary.discrepant_total) == (3, 3, 0)

    def test_mean_of_published_mode_ious(self):
        reports = [SlideReport("a", 0.61, 1, 1, 1), SlideReport("b", 0.92, 1, 1, 1)]
        assert aggregate_report(reports).mean_slide_iou == pytest.approx(0.765)

    def test_six_specimen_totals(self):
        reports = []
        for (pred, ref), size in build_all():
            reports.append(match_report(pred, ref, size))
        for rep, row in zip(reports, SPECIMEN_ROWS):
            assert (rep.ref_count, rep.pred_count, rep.discrepant) == row
        summary = aggregate_report(reports)
        assert (
            summary.ref_total,
            summary.pred_total,
            summary.discrepant_total,
        ) == EXPECTED_TOTAL

    def test_empty_rejected(self):
        with pytest.raises(InputValidationError):
            aggregate_report([])


class TestRendering:
    def test_mode_table(self):
        table = render_mode_table({"center": 0.92, "base": 0.61})
        lines = table.strip().splitlines()
        assert lines[0] == "mode,mean_iou"
        assert lines[1].startswith("base,0.61")
        assert lines[2].startswith("center,0.92")

    def test_discrepancy_table_total_row(self):
        reports = [match_report(p, r, size) for (p, r), size in build_all()]
        table = render_discrepancy_table(aggregate_report(reports))
        assert table.strip().splitlines()[-1] == "Total,115,112,17"

    def test_report_json_round_trips(self):
        import json

        reports = [match_report(p, r, size) for (p, r), size in build_all()]
        payload = json.loads(render_report_json(aggregate_report(reports), mode="center"))
        assert payload["mode"] == "center"
        assert payload["ref_total"] == 115
        assert len(payload["slides"]) == 6
