import numpy as np
import pytest
from PIL import Image

from gcdetect.dataset import (
    LABEL_BACKGROUND,
    LABEL_IGNORED,
    LABEL_ROI,
    LabeledExample,
    LabelThresholds,
    export_dataset,
    label_proposals,
    make_examples,
)
from gcdetect.errors import InputValidationError
from gcdetect.geometry import Box
from gcdetect.selective_search import RegionProposal
from gcdetect.slide_io import Slide, SlideAnnotation


def prop(box: Box) -> RegionProposal:
    return RegionProposal(local_box=box, birth_step=0, slide_id="s", slide_box=box)


def gt(*boxes) -> SlideAnnotation:
    return SlideAnnotation("s", "ground_truth", list(boxes))


class TestLabelProposals:
    def test_exact_match_is_roi(self):
        got = label_proposals([prop(Box(0, 0, 10, 10))], gt(Box(0, 0, 10, 10)))
        # proposal itself plus the appended ground-truth positive
        assert got[0][1] == LABEL_ROI and got[0][2] == 1.0
        assert got[1][1] == LABEL_ROI

    def test_no_ground_truth_all_background(self):
        got = label_proposals([prop(Box(0, 0, 10, 10)), prop(Box(5, 5, 9, 9))], gt())
        assert [(label, v) for _, label, v in got] == [
            (LABEL_BACKGROUND, 0.0),
            (LABEL_BACKGROUND, 0.0),
        ]

    def test_low_overlap_is_background(self):
        # IoU 25/175 ~ 0.143 <= 0.3
        got = label_proposals([prop(Box(0, 0, 10, 10))], gt(Box(5, 5, 15, 15)))
        assert got[0][1] == LABEL_BACKGROUND
        assert got[0][2] == pytest.approx(25 / 175)

    def test_band_between_thresholds_is_ignored(self):
        # IoU = 200/(400+200-200) = 0.5 -> roi at the boundary; shrink for the band
        boundary = label_proposals([prop(Box(0, 0, 20, 20))], gt(Box(0, 0, 20, 10)))
        assert boundary[0][1] == LABEL_ROI
        banded = label_proposals([prop(Box(0, 0, 20, 20))], gt(Box(0, 0, 20, 8)))
        assert banded[0][2] == pytest.approx(160 / 400)
        assert banded[0][1] == LABEL_IGNORED

    def test_ground_truth_appended_as_positives(self):
        got = label_proposals([], gt(Box(1, 1, 5, 5), Box(10, 10, 20, 20)))
        assert len(got) == 2
        assert all(label == LABEL_ROI and v == 1.0 for _, label, v in got)
        assert got[0][0].slide_box == Box(1, 1, 5, 5)

    def test_bad_thresholds_rejected(self):
        with pytest.raises(InputValidationError):
            LabelThresholds(positive=0.3, negative=0.5)
        with pytest.raises(InputValidationError):
            LabelThresholds(positive=1.5, negative=0.1)


class TestMakeExamples:
    def test_crops_resized_and_ignored_dropped(self):
        pixels = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        slide = Slide(id="s", pixels=pixels)
        labeled = [
            (prop(Box(0, 0, 32, 32)), LABEL_ROI, 1.0),
            (prop(Box(4, 4, 30, 30)), LABEL_IGNORED, 0.4),
            (prop(Box(32, 32, 64, 64)), LABEL_BACKGROUND, 0.0),
        ]
        examples = make_examples(labeled, slide, input_size=224)
        assert [e.label for e in examples] == [LABEL_ROI, LABEL_BACKGROUND]
        assert all(e.image.shape == (224, 224, 3) for e in examples)


def make_example(label, i, value=100):
    img = np.full((224, 224, 3), value, dtype=np.uint8)
    return LabeledExample(
        image=img, label=label, slide_id="s",
        slide_box=Box(i * 10, 0, i * 10 + 8, 8), max_iou=1.0 if label == LABEL_ROI else 0.0,
    )


class TestExportDataset:
    def test_balance_counting(self, tmp_path):
        examples = [make_example(LABEL_ROI, i) for i in range(10)]
        examples += [make_example(LABEL_BACKGROUND, 100 + i) for i in range(100)]
        index = export_dataset(examples, tmp_path / "ds", balance_ratio=3.0, seed=1)
        rows = index.read_text().strip().splitlines()
        assert rows[0] == "path,label,slide_id,x0,y0,x1,y1,max_iou"
        labels = [r.split(",")[1] for r in rows[1:]]
        assert labels.count("roi") == 10
        assert labels.count("background") == 30

    def test_large_ratio_keeps_everything(self, tmp_path):
        examples = [make_example(LABEL_ROI, 0), make_example(LABEL_BACKGROUND, 1)]
        index = export_dataset(examples, tmp_path / "ds", balance_ratio=100.0, seed=1)
        assert len(index.read_text().strip().splitlines()) == 3

    def test_rerun_is_byte_identical(self, tmp_path):
        examples = [make_example(LABEL_ROI, i) for i in range(3)]
        examples += [make_example(LABEL_BACKGROUND, 10 + i) for i in range(20)]
        a = export_dataset(examples, tmp_path / "a", balance_ratio=2.0, seed=7)
        b = export_dataset(examples, tmp_path / "b", balance_ratio=2.0, seed=7)
        assert a.read_bytes() == b.read_bytes()
        for pa in sorted((tmp_path / "a").rglob("*.png")):
            pb = tmp_path / "b" / pa.relative_to(tmp_path / "a")
            assert pa.read_bytes() == pb.read_bytes()

    def test_zero_roi_is_hard_error(self, tmp_path):
        with pytest.raises(InputValidationError, match="untrainable"):
            export_dataset([make_example(LABEL_BACKGROUND, 0)], tmp_path / "ds")

    def test_exported_pngs_decode_to_224(self, tmp_path):
        examples = [make_example(LABEL_ROI, 0)]
        export_dataset(examples, tmp_path / "ds")
        pngs = list((tmp_path / "ds").rglob("*.png"))
        assert pngs
        for p in pngs:
            with Image.open(p) as img:
                assert img.size == (224, 224)
                assert img.mode == "RGB"

    def test_no_exported_iou_inside_ignore_band(self, tmp_path):
        examples = [make_example(LABEL_ROI, i) for i in range(2)]
        examples += [make_example(LABEL_BACKGROUND, 5 + i) for i in range(5)]
        index = export_dataset(examples, tmp_path / "ds", balance_ratio=2.0, seed=3)
        for row in index.read_text().strip().splitlines()[1:]:
            v = float(row.split(",")[-1])
            assert not (0.3 < v < 0.5)
