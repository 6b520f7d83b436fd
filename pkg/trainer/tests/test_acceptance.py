"""Trainer acceptance: parameter counts, overfit smoke test, and the
export boundary consumed by the detection package. Run with -v -s for the
PASS/FAIL lines."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from gctrain.data import Dataset
from gctrain.export import export_model
from gctrain.model import build_model, parameter_counts
from gctrain.train import TrainConfig, train


def report(name: str, ok: bool) -> None:
    print(f"\n[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}")


def separable_dataset(n=50, seed=5) -> Dataset:
    """Dark roi crops vs pale background crops; linearly separable by brightness."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        roi = i % 2 == 0
        value = int(rng.integers(60, 101)) if roi else int(rng.integers(190, 231))
        img = np.full((224, 224, 3), value, dtype=np.int16)
        img += rng.integers(-8, 9, size=(224, 224, 3)).astype(np.int16)
        images.append(np.clip(img, 0, 255).astype(np.uint8))
        labels.append(1 if roi else 0)
    return Dataset(images=np.stack(images), labels=np.asarray(labels, dtype=np.int64), paths=[])


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    torch.manual_seed(0)
    model, counts = build_model(pretrained=False)
    dataset = separable_dataset()
    t0 = time.monotonic()
    history = train(
        model,
        dataset,
        TrainConfig(index="", epochs=20, batch_size=8, seed=0, stop_accuracy=0.95),
    )
    elapsed = time.monotonic() - t0

    out = tmp_path_factory.mktemp("export")
    roi_sample = dataset.images[0]
    manifest = export_model(
        model, out, roi_sample,
        metadata={"epochs_run": len(history.epochs), "final_accuracy": history.final_accuracy()},
    )
    return {
        "counts": counts,
        "history": history,
        "elapsed": elapsed,
        "manifest": manifest,
        "out": Path(out),
    }


def test_parameter_count_reproduction():
    torch.manual_seed(1)
    model, counts = build_model(pretrained=False)
    ok = counts == (126_633_474, 7_635_264) and parameter_counts(model) == counts
    report(f"parameter-counts trainable={counts[0]:,} frozen={counts[1]:,}", ok)
    assert ok


def test_overfit_smoke(overfit_run):
    history = overfit_run["history"]
    elapsed = overfit_run["elapsed"]
    acc = history.final_accuracy()
    ok = acc >= 0.95 and len(history.epochs) <= 20 and elapsed < 600.0
    report(
        f"overfit-smoke (accuracy {acc:.3f} >= 0.95 in {len(history.epochs)} epochs, "
        f"{elapsed:.0f}s < 600s)",
        ok,
    )
    assert ok


def test_boundary_round_trip_through_detector_backend(overfit_run):
    gcdetect_classifier = pytest.importorskip("gcdetect.classifier")

    out = overfit_run["out"]
    reference = json.loads((out / "golden" / "scores.json").read_text())
    patch = np.asarray(
        Image.open(out / "golden" / "patch.png").convert("RGB"), dtype=np.uint8
    )
    backend = gcdetect_classifier.load_model_backend(overfit_run["manifest"])
    [scores] = gcdetect_classifier.score_batch(backend, [patch])
    drift = max(
        abs(scores.p_roi - reference["p_roi"]),
        abs(scores.p_background - reference["p_background"]),
    )
    ok = drift <= 1e-4 and abs(scores.p_roi + scores.p_background - 1.0) <= 1e-5
    report(f"boundary-round-trip (score drift {drift:.2e} <= 1e-4)", ok)
    assert ok


def test_trained_model_separates_the_classes(overfit_run):
    gcdetect_classifier = pytest.importorskip("gcdetect.classifier")

    backend = gcdetect_classifier.load_model_backend(overfit_run["manifest"])
    dark = np.full((224, 224, 3), 70, dtype=np.uint8)
    pale = np.full((224, 224, 3), 215, dtype=np.uint8)
    roi_score, bg_score = gcdetect_classifier.score_batch(backend, [dark, pale])
    ok = roi_score.p_roi > 0.5 and bg_score.p_roi < 0.5
    report(
        f"trained-model-separates (dark p_roi {roi_score.p_roi:.3f}, "
        f"pale p_roi {bg_score.p_roi:.3f})",
        ok,
    )
    assert ok
