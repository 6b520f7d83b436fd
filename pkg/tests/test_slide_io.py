import json

import numpy as np
import pytest

from gcdetect.errors import (
    DimensionMismatchError,
    FormatError,
    InputValidationError,
    MissingFileError,
)
from gcdetect.geometry import Box
from gcdetect.slide_io import (
    ManifestEntry,
    Slide,
    SlideAnnotation,
    downsample,
    load_annotation,
    load_manifest,
    load_slide,
    save_annotation,
    save_manifest,
    write_image,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_slide(pixels, slide_id="s"):
    return Slide(id=slide_id, pixels=np.asarray(pixels, dtype=np.uint8))


class TestLoadSlide:
    def test_png_round_trip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(64, 48, 3), dtype=np.uint8)
        p = tmp_path / "a.png"
        write_image(p, pixels)
        slide = load_slide(p)
        assert slide.width == 48 and slide.height == 64
        np.testing.assert_array_equal(slide.pixels, pixels)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_slide(tmp_path / "nope.png")

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "a.bmp"
        p.write_bytes(b"BM")
        with pytest.raises(FormatError):
            load_slide(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"\x89PNG\r\n\x1a\n junk")
        with pytest.raises(FormatError):
            load_slide(p)

    def test_dimension_mismatch(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        p = tmp_path / "a.png"
        write_image(p, pixels)
        entry = ManifestEntry(id="a", path=p, width=512, height=512)
        with pytest.raises(DimensionMismatchError):
            load_slide(p, entry)

    def test_manifest_round_trip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(16, 24, 3), dtype=np.uint8)
        write_image(tmp_path / "x.png", pixels)
        save_manifest(
            tmp_path / "manifest.json",
            [{"id": "x", "path": "x.png", "width": 24, "height": 16, "mpp": 0.25}],
        )
        entries = load_manifest(tmp_path / "manifest.json")
        assert len(entries) == 1
        slide = load_slide(entries[0].path, entries[0])
        assert slide.id == "x" and slide.mpp == 0.25


class TestAnnotations:
    def test_round_trip(self, tmp_path):
        ann = SlideAnnotation("s1", "ground_truth", [Box(1, 2, 3, 4)])
        p = tmp_path / "ann.json"
        save_annotation(p, ann)
        got = load_annotation(p, slide_size=(10, 10))
        assert got.slide_id == "s1"
        assert got.source == "ground_truth"
        assert got.boxes == [Box(1, 2, 3, 4)]

    def test_bounds_checked_at_load(self, tmp_path):
        ann = SlideAnnotation("s1", "model", [Box(0, 0, 100, 100)])
        p = tmp_path / "ann.json"
        save_annotation(p, ann)
        with pytest.raises(InputValidationError):
            load_annotation(p, slide_size=(50, 50))

    def test_bad_source_rejected(self):
        with pytest.raises(InputValidationError):
            SlideAnnotation("s1", "martian", [])

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "ann.json"
        p.write_text(json.dumps({"slide_id": "s", "source": "model"}))
        with pytest.raises(FormatError):
            load_annotation(p)


class TestDownsample:
    def test_factor_one_identity(self, rng):
        pixels = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
        np.testing.assert_array_equal(downsample(make_slide(pixels), 1), pixels)

    def test_uniform_block(self):
        pixels = np.full((4, 4, 3), 100, dtype=np.uint8)
        out = downsample(make_slide(pixels), 2)
        np.testing.assert_array_equal(out, np.full((2, 2, 3), 100, dtype=np.uint8))

    def test_round_half_up(self):
        # block mean 127.5 rounds up to 128
        pixels = np.array([[[0] * 3, [0] * 3], [[255] * 3, [255] * 3]], dtype=np.uint8)
        out = downsample(make_slide(pixels), 2)
        np.testing.assert_array_equal(out, np.full((1, 1, 3), 128, dtype=np.uint8))

    def test_partial_edge_blocks(self):
        pixels = np.zeros((3, 3, 3), dtype=np.uint8)
        pixels[2, :, :] = 90
        pixels[:, 2, :] = 60
        pixels[2, 2, :] = 90
        out = downsample(make_slide(pixels), 2)
        assert out.shape == (2, 2, 3)
        # bottom-right edge block is the single pixel 90
        assert tuple(out[1, 1]) == (90, 90, 90)

    def test_rejects_bad_factor(self):
        with pytest.raises(InputValidationError):
            downsample(make_slide(np.zeros((2, 2, 3), dtype=np.uint8)), 0)


def test_slide_rejects_bad_pixels():
    with pytest.raises(InputValidationError):
        Slide(id="bad", pixels=np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(InputValidationError):
        Slide(id="bad", pixels=np.zeros((4, 4, 3), dtype=np.float32))


def test_slide_pixels_read_only():
    slide = make_slide(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        slide.pixels[0, 0, 0] = 1
