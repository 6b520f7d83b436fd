"""Patch scoring behind a pluggable backend.

Backends score batches of 224x224 RGB patches into (background, roi)
probability pairs. The stub backend is a deterministic luminance heuristic
that keeps the whole pipeline testable without a trained model; the model
backend runs an exported ONNX classifier through the bundled executor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputValidationError, MissingFileError, ModelError
from .onnx_exec import GraphRunner, read_model

CLASS_ORDER = ["background", "roi"]
PROB_SUM_TOL = 1e-5


@dataclass(frozen=True)
class ClassScores:
    p_roi: float
    p_background: float

    def __post_init__(self) -> None:
        for v in (self.p_roi, self.p_background):
            if not 0.0 <= v <= 1.0:
                raise InputValidationError(f"probability out of range: {v}")
        if abs(self.p_roi + self.p_background - 1.0) > PROB_SUM_TOL:
            raise InputValidationError(
                f"probabilities must sum to 1: {self.p_roi} + {self.p_background}"
            )


@dataclass(frozen=True)
class ModelManifest:
    input_size: int
    channel_order: str
    means: tuple[float, float, float]
    class_order: tuple[str, str]
    model_path: Path
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.input_size != 224:
            raise ModelError(f"manifest input_size must be 224, got {self.input_size}")
        if self.channel_order not in ("rgb", "bgr"):
            raise ModelError(f"channel_order must be 'rgb' or 'bgr', got {self.channel_order!r}")
        if list(self.class_order) != CLASS_ORDER:
            raise ModelError(f"class_order must be {CLASS_ORDER}, got {list(self.class_order)}")
        if len(self.means) != 3:
            raise ModelError(f"means must have 3 entries, got {self.means}")


def load_manifest(path: str | Path) -> ModelManifest:
    """Read a model manifest JSON; model_path resolves against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"model manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
        manifest = ModelManifest(
            input_size=int(payload["input_size"]),
            channel_order=str(payload["channel_order"]),
            means=tuple(float(v) for v in payload["means"]),
            class_order=tuple(str(v) for v in payload["class_order"]),
            model_path=(path.parent / payload["model_path"]).resolve(),
            metadata=payload.get("metadata", {}),
        )
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed model manifest {path}: {exc}") from exc
    return manifest


class StubBackend:
    """Deterministic scorer: darker patches score higher roi probability.

    Per-pixel luminance is round-half-up of (r+g+b)/3; p_roi = 1 - mean/255.
    """

    input_size = 224

    def score(self, batch: np.ndarray) -> np.ndarray:
        total = batch.astype(np.int64).sum(axis=3)
        lum = (2 * total + 3) // 6
        mean = lum.reshape(batch.shape[0], -1).mean(axis=1)
        p_roi = 1.0 - mean / 255.0
        return np.stack([1.0 - p_roi, p_roi], axis=1)


def stub_backend() -> StubBackend:
    return StubBackend()


class OnnxBackend:
    """Runs an exported classifier graph; safe for concurrent scoring."""

    def __init__(self, manifest: ModelManifest):
        self.manifest = manifest
        self.input_size = manifest.input_size
        model = read_model(manifest.model_path)
        self.runner = GraphRunner(model)

        feed_inputs = self.runner.feed_inputs
        if len(feed_inputs) != 1:
            raise ModelError(f"model must have exactly 1 input, found {len(feed_inputs)}")
        self.input_name = feed_inputs[0].name
        shape = feed_inputs[0].shape
        s = manifest.input_size
        if shape == (1, 3, s, s):
            self.layout = "nchw"
        elif shape == (1, s, s, 3):
            self.layout = "nhwc"
        else:
            raise ModelError(
                f"model input shape {shape} does not match manifest input_size {s} "
                f"(expected (1, 3, {s}, {s}) or (1, {s}, {s}, 3))"
            )
        outputs = model.graph.outputs
        if len(outputs) != 1:
            raise ModelError(f"model must have exactly 1 output, found {len(outputs)}")
        out_shape = outputs[0].shape
        if out_shape is not None and tuple(out_shape) != (1, 2):
            raise ModelError(f"model output shape {out_shape} is not (1, 2)")

    def _preprocess(self, patch: np.ndarray) -> np.ndarray:
        x = patch.astype(np.float32)
        if self.manifest.channel_order == "bgr":
            x = x[:, :, ::-1]
        x = x - np.asarray(self.manifest.means, dtype=np.float32)
        if self.layout == "nchw":
            x = np.ascontiguousarray(x.transpose(2, 0, 1))
        return x[None, ...]

    def score(self, batch: np.ndarray) -> np.ndarray:
        out = np.empty((batch.shape[0], 2), dtype=np.float64)
        for i in range(batch.shape[0]):
            probs = self.runner.run({self.input_name: self._preprocess(batch[i])})[0]
            probs = np.asarray(probs, dtype=np.float64).reshape(-1)
            if probs.shape[0] != 2:
                raise ModelError(f"model produced {probs.shape[0]} outputs, expected 2")
            out[i] = probs
        return out


def load_model_backend(manifest: ModelManifest | str | Path) -> OnnxBackend:
    """Backend for a trainer-exported model manifest (object or JSON path)."""
    if not isinstance(manifest, ModelManifest):
        manifest = load_manifest(manifest)
    return OnnxBackend(manifest)


def score_batch(backend, patches: list[np.ndarray]) -> list[ClassScores]:
    """Score patches in order; dimension checks happen before any backend call."""
    if not patches:
        return []
    size = backend.input_size
    for i, p in enumerate(patches):
        if p.shape != (size, size, 3):
            raise InputValidationError(
                f"patch {i} has shape {p.shape}, backend expects ({size}, {size}, 3)"
            )
        if p.dtype != np.uint8:
            raise InputValidationError(f"patch {i} must be uint8, got {p.dtype}")
    raw = backend.score(np.stack(patches))
    return [ClassScores(p_roi=float(r[1]), p_background=float(r[0])) for r in raw]
