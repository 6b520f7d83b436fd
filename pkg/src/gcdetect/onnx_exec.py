"""Self-contained ONNX model reading, writing, and CPU execution.

Implements the protobuf wire format directly for the message subset an
image-classifier graph needs (ModelProto/GraphProto/NodeProto/TensorProto
and friends), plus numpy kernels for the ops that occur in VGG-style
classifiers: Conv, Relu, MaxPool, Flatten, Reshape, Gemm, MatMul, Add,
Softmax, Identity, Transpose, Constant. Files written here are standard
ONNX and standard files restricted to these ops load here; unknown fields
are skipped, unknown ops are reported by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, MissingFileError, ModelError

# TensorProto.DataType values
DT_FLOAT = 1
DT_UINT8 = 2
DT_INT32 = 6
DT_INT64 = 7
DT_DOUBLE = 11

_NP_DTYPES = {
    DT_FLOAT: np.dtype("<f4"),
    DT_UINT8: np.dtype("u1"),
    DT_INT32: np.dtype("<i4"),
    DT_INT64: np.dtype("<i8"),
    DT_DOUBLE: np.dtype("<f8"),
}

# AttributeProto.AttributeType values
AT_FLOAT, AT_INT, AT_STRING, AT_TENSOR = 1, 2, 3, 4
AT_FLOATS, AT_INTS = 6, 7


# ---------------------------------------------------------------------------
# wire-format primitives
# ---------------------------------------------------------------------------


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise FormatError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise FormatError("varint too long")


def _signed(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _fields(buf: bytes):
    """Yield (field_number, wire_type, raw value) triples of one message."""
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        fnum, wtype = tag >> 3, tag & 7
        if wtype == 0:
            val, pos = _read_varint(buf, pos)
        elif wtype == 1:
            val, pos = buf[pos : pos + 8], pos + 8
        elif wtype == 2:
            ln, pos = _read_varint(buf, pos)
            if pos + ln > len(buf):
                raise FormatError("truncated length-delimited field")
            val, pos = buf[pos : pos + ln], pos + ln
        elif wtype == 5:
            val, pos = buf[pos : pos + 4], pos + 4
        else:
            raise FormatError(f"unsupported wire type {wtype}")
        yield fnum, wtype, val


def _varint(n: int) -> bytes:
    if n < 0:
        n += 1 << 64
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _emit(fnum: int, wtype: int, payload: bytes | int) -> bytes:
    tag = _varint((fnum << 3) | wtype)
    if wtype == 0:
        return tag + _varint(payload)
    return tag + _varint(len(payload)) + payload


def _emit_str(fnum: int, s: str) -> bytes:
    return _emit(fnum, 2, s.encode("utf-8"))


def _repeated_int64(buf: bytes | int, wtype: int) -> list[int]:
    if wtype == 0:
        return [_signed(buf)]
    vals = []
    pos = 0
    while pos < len(buf):
        v, pos = _read_varint(buf, pos)
        vals.append(_signed(v))
    return vals


# ---------------------------------------------------------------------------
# message model
# ---------------------------------------------------------------------------


@dataclass
class NodeLite:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class ValueLite:
    name: str
    elem_type: int | None = None
    shape: tuple | None = None  # ints, or None entries for symbolic dims


@dataclass
class GraphLite:
    nodes: list[NodeLite]
    initializers: dict[str, np.ndarray]
    inputs: list[ValueLite]
    outputs: list[ValueLite]
    name: str = ""


@dataclass
class ModelLite:
    graph: GraphLite
    opset: int = 13
    producer: str = ""


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = DT_FLOAT
    name = ""
    raw = None
    typed: list[float | int] = []
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            dims.extend(_repeated_int64(val, wtype))
        elif fnum == 2:
            data_type = val
        elif fnum == 4:  # float_data, packed
            typed.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fnum == 5:  # int32_data
            if wtype == 0:
                typed.append(_signed(val))
            else:
                pos = 0
                while pos < len(val):
                    v, pos = _read_varint(val, pos)
                    typed.append(_signed(v))
        elif fnum == 7:  # int64_data
            typed.extend(_repeated_int64(val, wtype))
        elif fnum == 8:
            name = val.decode("utf-8")
        elif fnum == 9:
            raw = val
        elif fnum == 10:  # double_data, packed
            typed.extend(np.frombuffer(val, dtype="<f8").tolist())
    dtype = _NP_DTYPES.get(data_type)
    if dtype is None:
        raise ModelError(f"tensor {name!r}: unsupported data type {data_type}")
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype)
    else:
        arr = np.asarray(typed, dtype=dtype)
    try:
        arr = arr.reshape(dims) if dims else arr.reshape(())
    except ValueError as exc:
        raise FormatError(f"tensor {name!r}: data does not match dims {dims}") from exc
    return name, arr


def _parse_attribute(buf: bytes):
    name = ""
    atype = None
    f_val = None
    i_val = None
    s_val = None
    t_val = None
    floats: list[float] = []
    ints: list[int] = []
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            name = val.decode("utf-8")
        elif fnum == 2:
            f_val = float(np.frombuffer(val, dtype="<f4")[0])
        elif fnum == 3:
            i_val = _signed(val)
        elif fnum == 4:
            s_val = val.decode("utf-8", errors="replace")
        elif fnum == 5:
            t_val = _parse_tensor(val)[1]
        elif fnum == 7:
            if wtype == 5:
                floats.append(float(np.frombuffer(val, dtype="<f4")[0]))
            else:
                floats.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fnum == 8:
            ints.extend(_repeated_int64(val, wtype))
        elif fnum == 20:
            atype = val
    if atype == AT_FLOAT or (atype is None and f_val is not None):
        return name, f_val
    if atype == AT_INT or (atype is None and i_val is not None):
        return name, i_val
    if atype == AT_STRING or (atype is None and s_val is not None):
        return name, s_val
    if atype == AT_TENSOR or (atype is None and t_val is not None):
        return name, t_val
    if atype == AT_FLOATS or (atype is None and floats):
        return name, floats
    return name, ints


def _parse_node(buf: bytes) -> NodeLite:
    node = NodeLite(op_type="", inputs=[], outputs=[])
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            node.inputs.append(val.decode("utf-8"))
        elif fnum == 2:
            node.outputs.append(val.decode("utf-8"))
        elif fnum == 3:
            node.name = val.decode("utf-8")
        elif fnum == 4:
            node.op_type = val.decode("utf-8")
        elif fnum == 5:
            k, v = _parse_attribute(val)
            node.attrs[k] = v
    return node


def _parse_shape(buf: bytes) -> tuple:
    dims = []
    for fnum, _, val in _fields(buf):
        if fnum == 1:  # Dimension
            dim_value = None
            for dfnum, dwtype, dval in _fields(val):
                if dfnum == 1:
                    dim_value = _signed(dval)
            dims.append(dim_value)
    return tuple(dims)


def _parse_value_info(buf: bytes) -> ValueLite:
    out = ValueLite(name="")
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            out.name = val.decode("utf-8")
        elif fnum == 2:  # TypeProto
            for tfnum, _, tval in _fields(val):
                if tfnum == 1:  # tensor_type
                    for ffnum, fwtype, fval in _fields(tval):
                        if ffnum == 1:
                            out.elem_type = fval
                        elif ffnum == 2:
                            out.shape = _parse_shape(fval)
    return out


def _parse_graph(buf: bytes) -> GraphLite:
    graph = GraphLite(nodes=[], initializers={}, inputs=[], outputs=[])
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            graph.nodes.append(_parse_node(val))
        elif fnum == 2:
            graph.name = val.decode("utf-8")
        elif fnum == 5:
            name, arr = _parse_tensor(val)
            graph.initializers[name] = arr
        elif fnum == 11:
            graph.inputs.append(_parse_value_info(val))
        elif fnum == 12:
            graph.outputs.append(_parse_value_info(val))
    return graph


def read_model(path: str | Path) -> ModelLite:
    """Parse an ONNX file into the lite model structure."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"model file not found: {path}")
    buf = path.read_bytes()
    graph = None
    opset = 13
    producer = ""
    try:
        for fnum, wtype, val in _fields(buf):
            if fnum == 7 and wtype == 2:
                graph = _parse_graph(val)
            elif fnum == 2 and wtype == 2:
                producer = val.decode("utf-8", errors="replace")
            elif fnum == 8 and wtype == 2:
                for ofnum, owtype, oval in _fields(val):
                    if ofnum == 2:
                        opset = _signed(oval)
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot parse ONNX file {path}: {exc}") from exc
    if graph is None:
        raise FormatError(f"no graph found in ONNX file {path}")
    return ModelLite(graph=graph, opset=opset, producer=producer)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    kind_map = {"f": {4: DT_FLOAT, 8: DT_DOUBLE}, "i": {4: DT_INT32, 8: DT_INT64}, "u": {1: DT_UINT8}}
    try:
        data_type = kind_map[arr.dtype.kind][arr.dtype.itemsize]
    except KeyError:
        raise ModelError(f"tensor {name!r}: cannot encode dtype {arr.dtype}")
    out = bytearray()
    for d in arr.shape:
        out += _emit(1, 0, d)
    out += _emit(2, 0, data_type)
    out += _emit_str(8, name)
    out += _emit(9, 2, np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    return bytes(out)


def _encode_attribute(name: str, value) -> bytes:
    out = bytearray(_emit_str(1, name))
    if isinstance(value, float):
        out += _emit(2, 5, np.float32(value).tobytes())
        out += _emit(20, 0, AT_FLOAT)
    elif isinstance(value, bool):
        out += _emit(3, 0, int(value))
        out += _emit(20, 0, AT_INT)
    elif isinstance(value, int):
        out += _emit(3, 0, value)
        out += _emit(20, 0, AT_INT)
    elif isinstance(value, str):
        out += _emit(4, 2, value.encode("utf-8"))
        out += _emit(20, 0, AT_STRING)
    elif isinstance(value, np.ndarray):
        out += _emit(5, 2, _encode_tensor("", value))
        out += _emit(20, 0, AT_TENSOR)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, float) for v in value):
        for v in value:
            out += _emit(7, 5, np.float32(v).tobytes())
        out += _emit(20, 0, AT_FLOATS)
    elif isinstance(value, (list, tuple)):
        for v in value:
            out += _emit(8, 0, int(v))
        out += _emit(20, 0, AT_INTS)
    else:
        raise ModelError(f"attribute {name!r}: cannot encode {type(value)}")
    return bytes(out)


def _encode_node(node: NodeLite) -> bytes:
    out = bytearray()
    for s in node.inputs:
        out += _emit_str(1, s)
    for s in node.outputs:
        out += _emit_str(2, s)
    if node.name:
        out += _emit_str(3, node.name)
    out += _emit_str(4, node.op_type)
    for k in node.attrs:
        out += _emit(5, 2, _encode_attribute(k, node.attrs[k]))
    return bytes(out)


def _encode_value_info(v: ValueLite) -> bytes:
    shape = bytearray()
    for d in v.shape or ():
        dim = _emit(1, 0, int(d))
        shape += _emit(1, 2, dim)
    tensor_type = _emit(1, 0, v.elem_type or DT_FLOAT) + _emit(2, 2, bytes(shape))
    type_proto = _emit(1, 2, tensor_type)
    return _emit_str(1, v.name) + _emit(2, 2, type_proto)


def write_model(path: str | Path, model: ModelLite) -> None:
    """Serialize a lite model as a standard ONNX file."""
    g = model.graph
    graph = bytearray()
    for node in g.nodes:
        graph += _emit(1, 2, _encode_node(node))
    graph += _emit_str(2, g.name or "graph")
    for name, arr in g.initializers.items():
        graph += _emit(5, 2, _encode_tensor(name, arr))
    for v in g.inputs:
        graph += _emit(11, 2, _encode_value_info(v))
    for v in g.outputs:
        graph += _emit(12, 2, _encode_value_info(v))

    out = bytearray()
    out += _emit(1, 0, 8)  # ir_version
    out += _emit_str(2, model.producer or "gcdetect")
    out += _emit(7, 2, bytes(graph))
    opset = _emit_str(1, "") + _emit(2, 0, model.opset)
    out += _emit(8, 2, opset)
    Path(path).write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def _attr(node: NodeLite, name: str, default):
    return node.attrs.get(name, default)


def _conv(node: NodeLite, x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    if _attr(node, "group", 1) != 1:
        raise ModelError(f"Conv {node.name!r}: grouped convolution not supported")
    if any(d != 1 for d in _attr(node, "dilations", [1, 1])):
        raise ModelError(f"Conv {node.name!r}: dilations not supported")
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = _attr(node, "strides", [1, 1])
    pads = _attr(node, "pads", [0, 0, 0, 0])
    ph0, pw0, ph1, pw1 = pads
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    ho = (h + ph0 + ph1 - kh) // sh + 1
    wo = (wd + pw0 + pw1 - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    win = win[:, :, :ho, :wo]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = col @ w.reshape(w.shape[0], -1).T
    out = out.reshape(n, ho, wo, w.shape[0]).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def _maxpool(node: NodeLite, x: np.ndarray) -> np.ndarray:
    kh, kw = _attr(node, "kernel_shape", [2, 2])
    sh, sw = _attr(node, "strides", [kh, kw])
    ph0, pw0, ph1, pw1 = _attr(node, "pads", [0, 0, 0, 0])
    if (ph0, pw0, ph1, pw1) != (0, 0, 0, 0):
        xp = np.pad(
            x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)), constant_values=-np.inf
        )
    else:
        xp = x
    h, w = xp.shape[2], xp.shape[3]
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    win = win[:, :, :ho, :wo]
    return np.ascontiguousarray(win.max(axis=(4, 5)).astype(x.dtype))


def _gemm(node: NodeLite, a, b, c=None):
    if _attr(node, "transA", 0):
        a = a.T
    if _attr(node, "transB", 0):
        b = b.T
    out = _attr(node, "alpha", 1.0) * (a @ b)
    if c is not None:
        out = out + _attr(node, "beta", 1.0) * c
    return out


def _softmax(node: NodeLite, x: np.ndarray, opset: int) -> np.ndarray:
    axis = _attr(node, "axis", -1 if opset >= 13 else 1)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _flatten(node: NodeLite, x: np.ndarray) -> np.ndarray:
    axis = _attr(node, "axis", 1)
    lead = int(np.prod(x.shape[:axis], dtype=np.int64)) if axis else 1
    return x.reshape(lead, -1)


def _reshape(x: np.ndarray, shape: np.ndarray) -> np.ndarray:
    dims = [int(x.shape[i]) if s == 0 else int(s) for i, s in enumerate(shape.tolist())]
    return x.reshape(dims)


class GraphRunner:
    """Executes a parsed graph on numpy arrays, nodes in file order."""

    def __init__(self, model: ModelLite):
        self.model = model
        self.graph = model.graph
        g = self.graph
        self.feed_inputs = [v for v in g.inputs if v.name not in g.initializers]
        missing = [
            name
            for node in g.nodes
            for name in node.inputs
            if name
            and name not in g.initializers
            and name not in {v.name for v in self.feed_inputs}
            and name not in {o for n in g.nodes for o in n.outputs}
        ]
        if missing:
            raise ModelError(f"graph references undefined tensors: {sorted(set(missing))}")

    def run(self, feeds: dict[str, np.ndarray]) -> list[np.ndarray]:
        values: dict[str, np.ndarray] = dict(self.graph.initializers)
        values.update(feeds)
        for node in self.graph.nodes:
            try:
                self._run_node(node, values)
            except ModelError:
                raise
            except Exception as exc:
                raise ModelError(f"{node.op_type} node {node.name!r} failed: {exc}") from exc
        out = []
        for v in self.graph.outputs:
            if v.name not in values:
                raise ModelError(f"graph output {v.name!r} was never produced")
            out.append(values[v.name])
        return out

    def _run_node(self, node: NodeLite, values: dict[str, np.ndarray]) -> None:
        ins = [values[name] if name else None for name in node.inputs]
        op = node.op_type
        if op == "Conv":
            result = _conv(node, ins[0], ins[1], ins[2] if len(ins) > 2 else None)
        elif op == "Relu":
            result = np.maximum(ins[0], 0)
        elif op == "MaxPool":
            result = _maxpool(node, ins[0])
        elif op == "Gemm":
            result = _gemm(node, ins[0], ins[1], ins[2] if len(ins) > 2 else None)
        elif op == "MatMul":
            result = ins[0] @ ins[1]
        elif op == "Add":
            result = ins[0] + ins[1]
        elif op == "Softmax":
            result = _softmax(node, ins[0], self.model.opset)
        elif op == "Flatten":
            result = _flatten(node, ins[0])
        elif op == "Reshape":
            result = _reshape(ins[0], ins[1])
        elif op == "Transpose":
            result = np.transpose(ins[0], _attr(node, "perm", None))
        elif op == "Identity":
            result = ins[0]
        elif op == "Constant":
            result = node.attrs.get("value")
            if result is None:
                raise ModelError(f"Constant node {node.name!r} without tensor value")
        else:
            raise ModelError(f"unsupported op {op!r} (node {node.name!r})")
        values[node.outputs[0]] = result
