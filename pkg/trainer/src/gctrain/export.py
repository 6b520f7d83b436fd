"""Export: ONNX graph + manifest JSON + golden scoring pair.

The graph is the trained network in inference form (dropout dropped, a
Softmax node appended), one Conv/Relu/MaxPool node per backbone layer and
Gemm nodes for the dense head. After writing, the file is parsed back,
rebuilt as torch modules, and rescored against the in-memory model; any
drift beyond tolerance fails the export.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import CLASS_ORDER
from .model import PIXEL_MEANS, preprocess
from .onnx_io import Graph, Node, read_graph, write_graph

SELF_CHECK_TOLERANCE = 1e-4


class ExportError(RuntimeError):
    pass


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def build_graph(model: torch.nn.Module) -> Graph:
    """Translate the torchvision VGG16 variant into node + initializer form."""
    nodes: list[Node] = []
    initializers: dict[str, np.ndarray] = {}
    current = "image"
    idx = 0

    for layer in model.features:
        if isinstance(layer, torch.nn.Conv2d):
            w_name, b_name = f"conv{idx}_w", f"conv{idx}_b"
            initializers[w_name] = _np(layer.weight)
            initializers[b_name] = _np(layer.bias)
            out = f"conv{idx}"
            nodes.append(
                Node(
                    "Conv",
                    [current, w_name, b_name],
                    [out],
                    name=out,
                    attrs={
                        "kernel_shape": list(layer.kernel_size),
                        "strides": list(layer.stride),
                        "pads": [layer.padding[0], layer.padding[1],
                                 layer.padding[0], layer.padding[1]],
                    },
                )
            )
            current = out
            idx += 1
        elif isinstance(layer, torch.nn.ReLU):
            out = f"{current}_relu"
            nodes.append(Node("Relu", [current], [out], name=out))
            current = out
        elif isinstance(layer, torch.nn.MaxPool2d):
            out = f"{current}_pool"
            nodes.append(
                Node(
                    "MaxPool",
                    [current],
                    [out],
                    name=out,
                    attrs={
                        "kernel_shape": [layer.kernel_size, layer.kernel_size],
                        "strides": [layer.stride, layer.stride],
                    },
                )
            )
            current = out
        else:
            raise ExportError(f"unexpected backbone layer {type(layer).__name__}")

    nodes.append(Node("Flatten", [current], ["flat"], name="flatten", attrs={"axis": 1}))
    current = "flat"

    fc = 0
    for layer in model.classifier:
        if isinstance(layer, torch.nn.Linear):
            w_name, b_name = f"fc{fc}_w", f"fc{fc}_b"
            initializers[w_name] = _np(layer.weight)
            initializers[b_name] = _np(layer.bias)
            out = f"fc{fc}"
            nodes.append(
                Node("Gemm", [current, w_name, b_name], [out], name=out, attrs={"transB": 1})
            )
            current = out
            fc += 1
        elif isinstance(layer, torch.nn.ReLU):
            out = f"{current}_relu"
            nodes.append(Node("Relu", [current], [out], name=out))
            current = out
        elif isinstance(layer, torch.nn.Dropout):
            continue  # identity at inference
        else:
            raise ExportError(f"unexpected head layer {type(layer).__name__}")

    nodes.append(Node("Softmax", [current], ["probs"], name="softmax", attrs={"axis": 1}))
    return Graph(
        nodes=nodes,
        initializers=initializers,
        input_name="image",
        input_shape=(1, 3, 224, 224),
        output_name="probs",
        output_shape=(1, 2),
    )


def rebuild_torch(graph: Graph) -> torch.nn.Module:
    """Reconstruct an executable torch module from a parsed graph."""
    layers: list[torch.nn.Module] = []
    flattened = False
    for node in graph.nodes:
        if node.op_type == "Conv":
            w = torch.from_numpy(graph.initializers[node.inputs[1]].copy())
            b = torch.from_numpy(graph.initializers[node.inputs[2]].copy())
            conv = torch.nn.Conv2d(
                w.shape[1], w.shape[0], tuple(w.shape[2:]),
                stride=tuple(node.attrs["strides"]),
                padding=tuple(node.attrs["pads"][:2]),
            )
            with torch.no_grad():
                conv.weight.copy_(w)
                conv.bias.copy_(b)
            layers.append(conv)
        elif node.op_type == "Relu":
            layers.append(torch.nn.ReLU())
        elif node.op_type == "MaxPool":
            k = node.attrs["kernel_shape"][0]
            s = node.attrs["strides"][0]
            layers.append(torch.nn.MaxPool2d(k, s))
        elif node.op_type == "Flatten":
            layers.append(torch.nn.Flatten())
            flattened = True
        elif node.op_type == "Gemm":
            w = torch.from_numpy(graph.initializers[node.inputs[1]].copy())
            b = torch.from_numpy(graph.initializers[node.inputs[2]].copy())
            linear = torch.nn.Linear(w.shape[1], w.shape[0])
            with torch.no_grad():
                linear.weight.copy_(w)
                linear.bias.copy_(b)
            layers.append(linear)
        elif node.op_type == "Softmax":
            layers.append(torch.nn.Softmax(dim=1))
        else:
            raise ExportError(f"cannot rebuild op {node.op_type!r}")
    if not flattened:
        raise ExportError("graph lacks a Flatten node")
    return torch.nn.Sequential(*layers).eval()


def score_reference(model: torch.nn.Module, patch: np.ndarray) -> tuple[float, float]:
    """(p_background, p_roi) of one uint8 RGB patch through the torch model."""
    model.eval()
    with torch.no_grad():
        x = preprocess(torch.from_numpy(patch[None, ...]))
        logits = model(x)
        if logits.shape[-1] != 2:
            raise ExportError(f"model emitted {logits.shape[-1]} outputs, expected 2")
        if isinstance(model, torch.nn.Sequential):  # rebuilt graph ends in Softmax
            probs = logits[0]
        else:
            probs = torch.softmax(logits, dim=1)[0]
    return float(probs[0]), float(probs[1])


def export_model(
    model: torch.nn.Module,
    out_dir: str | Path,
    sample_patch: np.ndarray,
    metadata: dict | None = None,
) -> Path:
    """Write model.onnx, manifest.json, and the golden pair; returns manifest path.

    Raises ExportError if the reloaded graph drifts from the live model by
    more than SELF_CHECK_TOLERANCE on the golden patch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()

    model_path = out_dir / "model.onnx"
    write_graph(model_path, build_graph(model))

    ref_bg, ref_roi = score_reference(model, sample_patch)
    reloaded = rebuild_torch(read_graph(model_path))
    got_bg, got_roi = score_reference(reloaded, sample_patch)
    drift = max(abs(ref_bg - got_bg), abs(ref_roi - got_roi))
    if drift > SELF_CHECK_TOLERANCE:
        raise ExportError(
            f"export self-check failed: reloaded scores drift {drift:.2e} "
            f"> {SELF_CHECK_TOLERANCE}"
        )

    golden_dir = out_dir / "golden"
    golden_dir.mkdir(exist_ok=True)
    Image.fromarray(sample_patch, mode="RGB").save(golden_dir / "patch.png")
    (golden_dir / "scores.json").write_text(
        json.dumps({"p_background": ref_bg, "p_roi": ref_roi}, indent=2) + "\n"
    )

    manifest = {
        "input_size": 224,
        "channel_order": "rgb",
        "means": list(PIXEL_MEANS),
        "class_order": CLASS_ORDER,
        "model_path": "model.onnx",
        "metadata": {"self_check_drift": drift, **(metadata or {})},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
