import json

import numpy as np
import pytest
import torch

from gctrain.export import ExportError, build_graph, export_model, rebuild_torch, score_reference
from gctrain.onnx_io import read_graph, write_graph


class MiniNet(torch.nn.Module):
    """VGG-shaped stand-in (features + classifier) small enough for fast tests."""

    def __init__(self):
        super().__init__()
        self.features = torch.nn.Sequential(
            torch.nn.Conv2d(3, 4, 3, padding=1),
            torch.nn.ReLU(),
            torch.nn.MaxPool2d(2, 2),
        )
        self.classifier = torch.nn.Sequential(
            torch.nn.Linear(4 * 112 * 112, 8),
            torch.nn.ReLU(),
            torch.nn.Dropout(),
            torch.nn.Linear(8, 2),
        )

    def forward(self, x):
        x = self.features(x)
        x = torch.flatten(x, 1)
        return self.classifier(x)


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    torch.manual_seed(4)
    model = MiniNet().eval()
    rng = np.random.default_rng(4)
    sample = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    out = tmp_path_factory.mktemp("mini_export")
    manifest = export_model(model, out, sample, metadata={"note": "mini"})
    return model, sample, out, manifest


def test_manifest_contract(exported):
    _, _, out, manifest_path = exported
    manifest = json.loads(manifest_path.read_text())
    assert set(manifest) == {
        "input_size", "channel_order", "means", "class_order", "model_path", "metadata",
    }
    assert manifest["input_size"] == 224
    assert manifest["class_order"] == ["background", "roi"]
    assert manifest["channel_order"] == "rgb"
    assert len(manifest["means"]) == 3
    assert (out / manifest["model_path"]).is_file()


def test_golden_pair_written_and_valid(exported):
    _, _, out, _ = exported
    scores = json.loads((out / "golden" / "scores.json").read_text())
    assert abs(scores["p_background"] + scores["p_roi"] - 1.0) <= 1e-5
    assert (out / "golden" / "patch.png").is_file()


def test_reload_matches_live_model_tightly(exported):
    model, _, out, _ = exported
    rebuilt = rebuild_torch(read_graph(out / "model.onnx"))
    rng = np.random.default_rng(9)
    for _ in range(3):
        patch = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
        ref = score_reference(model, patch)
        got = score_reference(rebuilt, patch)
        assert max(abs(ref[0] - got[0]), abs(ref[1] - got[1])) <= 1e-6


def test_graph_structure(exported):
    model, _, _, _ = exported
    graph = build_graph(model)
    ops = [n.op_type for n in graph.nodes]
    assert ops == ["Conv", "Relu", "MaxPool", "Flatten", "Gemm", "Relu", "Gemm", "Softmax"]
    assert graph.input_shape == (1, 3, 224, 224)
    assert graph.output_shape == (1, 2)


def test_detector_backend_accepts_mini_model(exported):
    gcdetect_classifier = pytest.importorskip("gcdetect.classifier")
    _, sample, _, manifest_path = exported
    backend = gcdetect_classifier.load_model_backend(manifest_path)
    [scores] = gcdetect_classifier.score_batch(backend, [sample])
    golden = json.loads((manifest_path.parent / "golden" / "scores.json").read_text())
    assert abs(scores.p_roi - golden["p_roi"]) <= 1e-4


def test_write_read_round_trip(tmp_path):
    torch.manual_seed(2)
    model = MiniNet().eval()
    graph = build_graph(model)
    write_graph(tmp_path / "m.onnx", graph)
    back = read_graph(tmp_path / "m.onnx")
    assert [n.op_type for n in back.nodes] == [n.op_type for n in graph.nodes]
    assert back.input_name == "image" and back.output_name == "probs"
    for name, arr in graph.initializers.items():
        np.testing.assert_array_equal(back.initializers[name], arr)


def test_unsupported_layer_rejected():
    class Weird(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.features = torch.nn.Sequential(torch.nn.Sigmoid())
            self.classifier = torch.nn.Sequential(torch.nn.Linear(2, 2))

    with pytest.raises(ExportError):
        build_graph(Weird())
