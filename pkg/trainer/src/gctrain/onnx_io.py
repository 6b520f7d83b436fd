"""ONNX serialization for the exported classifier, protobuf wire format
written directly.

Only the messages a feed-forward image classifier needs are implemented
(ModelProto, GraphProto, NodeProto, TensorProto, ValueInfoProto and their
types). The reader exists for the export self-check: it parses the file
back and the checker rebuilds torch modules from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DT_FLOAT = 1
DT_INT64 = 7

AT_FLOAT, AT_INT, AT_STRING, AT_TENSOR = 1, 2, 3, 4
AT_FLOATS, AT_INTS = 6, 7


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class Graph:
    nodes: list[Node]
    initializers: dict[str, np.ndarray]
    input_name: str
    input_shape: tuple[int, ...]
    output_name: str
    output_shape: tuple[int, ...]
    name: str = "classifier"


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


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


def _emit(fnum: int, wtype: int, payload) -> bytes:
    tag = _varint((fnum << 3) | wtype)
    if wtype == 0:
        return tag + _varint(payload)
    return tag + _varint(len(payload)) + payload


def _emit_str(fnum: int, s: str) -> bytes:
    return _emit(fnum, 2, s.encode("utf-8"))


def _tensor(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        data_type = DT_FLOAT
    elif arr.dtype == np.int64:
        data_type = DT_INT64
    else:
        raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
    out = bytearray()
    for d in arr.shape:
        out += _emit(1, 0, d)
    out += _emit(2, 0, data_type)
    out += _emit_str(8, name)
    out += _emit(9, 2, np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    return bytes(out)


def _attribute(name: str, value) -> bytes:
    out = bytearray(_emit_str(1, name))
    if isinstance(value, bool) or isinstance(value, int):
        out += _emit(3, 0, int(value))
        out += _emit(20, 0, AT_INT)
    elif isinstance(value, float):
        out += _emit(2, 5, np.float32(value).tobytes())
        out += _emit(20, 0, AT_FLOAT)
    elif isinstance(value, str):
        out += _emit(4, 2, value.encode("utf-8"))
        out += _emit(20, 0, AT_STRING)
    elif isinstance(value, (list, tuple)):
        for v in value:
            out += _emit(8, 0, int(v))
        out += _emit(20, 0, AT_INTS)
    else:
        raise ValueError(f"attribute {name!r}: unsupported type {type(value)}")
    return bytes(out)


def _node(node: Node) -> bytes:
    out = bytearray()
    for s in node.inputs:
        out += _emit_str(1, s)
    for s in node.outputs:
        out += _emit_str(2, s)
    if node.name:
        out += _emit_str(3, node.name)
    out += _emit_str(4, node.op_type)
    for key in node.attrs:
        out += _emit(5, 2, _attribute(key, node.attrs[key]))
    return bytes(out)


def _value_info(name: str, shape: tuple[int, ...]) -> bytes:
    dims = bytearray()
    for d in shape:
        dims += _emit(1, 2, _emit(1, 0, int(d)))
    tensor_type = _emit(1, 0, DT_FLOAT) + _emit(2, 2, bytes(dims))
    return _emit_str(1, name) + _emit(2, 2, _emit(1, 2, tensor_type))


def write_graph(path: str | Path, graph: Graph, opset: int = 13) -> None:
    body = bytearray()
    for node in graph.nodes:
        body += _emit(1, 2, _node(node))
    body += _emit_str(2, graph.name)
    for name, arr in graph.initializers.items():
        body += _emit(5, 2, _tensor(name, arr))
    body += _emit(11, 2, _value_info(graph.input_name, graph.input_shape))
    body += _emit(12, 2, _value_info(graph.output_name, graph.output_shape))

    out = bytearray()
    out += _emit(1, 0, 8)  # ir_version
    out += _emit_str(2, "gctrain")
    out += _emit(7, 2, bytes(body))
    out += _emit(8, 2, _emit_str(1, "") + _emit(2, 0, opset))
    Path(path).write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# decoding (for the export self-check)
# ---------------------------------------------------------------------------


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7


def _fields(buf: bytes):
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
            val, pos = buf[pos : pos + ln], pos + ln
        elif wtype == 5:
            val, pos = buf[pos : pos + 4], pos + 4
        else:
            raise ValueError(f"unsupported wire type {wtype}")
        yield fnum, wtype, val


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims = []
    data_type = DT_FLOAT
    name = ""
    raw = b""
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            dims.append(val if wtype == 0 else None)
        elif fnum == 2:
            data_type = val
        elif fnum == 8:
            name = val.decode("utf-8")
        elif fnum == 9:
            raw = val
    dtype = np.dtype("<f4") if data_type == DT_FLOAT else np.dtype("<i8")
    return name, np.frombuffer(raw, dtype=dtype).reshape(dims)


def _parse_attr(buf: bytes):
    name = ""
    value = None
    ints = []
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            name = val.decode("utf-8")
        elif fnum == 2:
            value = float(np.frombuffer(val, dtype="<f4")[0])
        elif fnum == 3:
            value = val
        elif fnum == 4:
            value = val.decode("utf-8")
        elif fnum == 8:
            ints.append(val)
    return name, (ints if ints else value)


def _parse_node(buf: bytes) -> Node:
    node = Node(op_type="", inputs=[], outputs=[])
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
            k, v = _parse_attr(val)
            node.attrs[k] = v
    return node


def read_graph(path: str | Path) -> Graph:
    buf = Path(path).read_bytes()
    nodes: list[Node] = []
    initializers: dict[str, np.ndarray] = {}
    input_name = output_name = ""
    for fnum, wtype, val in _fields(buf):
        if fnum == 7 and wtype == 2:
            for gfnum, _, gval in _fields(val):
                if gfnum == 1:
                    nodes.append(_parse_node(gval))
                elif gfnum == 5:
                    name, arr = _parse_tensor(gval)
                    initializers[name] = arr
                elif gfnum == 11:
                    input_name = _first_name(gval)
                elif gfnum == 12:
                    output_name = _first_name(gval)
    return Graph(
        nodes=nodes,
        initializers=initializers,
        input_name=input_name,
        input_shape=(),
        output_name=output_name,
        output_shape=(),
    )


def _first_name(buf: bytes) -> str:
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            return val.decode("utf-8")
    return ""
