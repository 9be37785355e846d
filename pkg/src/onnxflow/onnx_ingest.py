"""ONNX model ingestion.

Two front ends produce the same :class:`RawModel`: a decoder for the binary
protobuf encoding (only the subset of ``onnx.proto`` this flow needs) and a
JSON mirror used by fixtures and tests.

Field numbers, from onnx.proto:

    ModelProto      opset_import=8, graph=7
    OperatorSetId   domain=1, version=2
    GraphProto      node=1, name=2, initializer=5, input=11, output=12
    NodeProto       input=1, output=2, name=3, op_type=4, attribute=5, domain=7
    AttributeProto  name=1, f=2, i=3, s=4, t=5, floats=7, ints=8, type=20
    TensorProto     dims=1, data_type=2, float_data=4, int64_data=7, name=8,
                    raw_data=9, data_location=14
    ValueInfoProto  name=1, type=2
    TypeProto       tensor_type=1 -> elem_type=1, shape=2 -> dim=1
                    -> dim_value=1, dim_param=2
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .errors import (
    DanglingInput,
    MalformedFile,
    SchemaViolation,
    UnsupportedOperator,
    UnsupportedTensorType,
)

SUPPORTED_OPS = frozenset(
    {"Conv", "Relu", "MaxPool", "BatchNormalization", "Gemm", "MatMul", "Add", "Flatten", "Reshape"}
)
DEFAULT_OPSET = 13

# TensorProto.DataType
_FLOAT = 1
_INT64 = 7

# AttributeProto.AttributeType
_ATTR_FLOAT, _ATTR_INT, _ATTR_STRING, _ATTR_TENSOR = 1, 2, 3, 4
_ATTR_FLOATS, _ATTR_INTS = 6, 7

Shape = tuple  # tuple of int | None (None = symbolic dimension)


@dataclass(eq=False)
class RawNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attributes: dict[str, Any] = field(default_factory=dict)
    name: str = ""

    def __eq__(self, other):
        if not isinstance(other, RawNode):
            return NotImplemented
        return (
            self.op_type == other.op_type
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and self.name == other.name
            and _attrs_equal(self.attributes, other.attributes)
        )


def _attrs_equal(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    for key, va in a.items():
        vb = b[key]
        if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
            if not (isinstance(va, np.ndarray) and isinstance(vb, np.ndarray)):
                return False
            if va.dtype != vb.dtype or va.shape != vb.shape or not np.array_equal(va, vb):
                return False
        elif type(va) is not type(vb) or va != vb:
            return False
    return True


@dataclass(eq=False)
class RawModel:
    graph_name: str
    nodes: list[RawNode]
    initializers: dict[str, np.ndarray]
    graph_inputs: list[tuple[str, Shape]]
    graph_outputs: list[tuple[str, Shape]]
    opset_version: int = DEFAULT_OPSET

    def __eq__(self, other):
        if not isinstance(other, RawModel):
            return NotImplemented
        if (
            self.graph_name != other.graph_name
            or self.nodes != other.nodes
            or self.graph_inputs != other.graph_inputs
            or self.graph_outputs != other.graph_outputs
            or self.opset_version != other.opset_version
            or list(self.initializers) != list(other.initializers)
        ):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.initializers.values(), other.initializers.values())
        )

    def validate(self) -> "RawModel":
        """Check operator support, initializer payloads and topological order."""
        known = {name for name, _ in self.graph_inputs} | set(self.initializers)
        for name, arr in self.initializers.items():
            if arr.dtype != np.float32:
                raise UnsupportedTensorType(f"initializer {name!r} has dtype {arr.dtype}")
        seen_outputs: set[str] = set()
        for node in self.nodes:
            if node.op_type not in SUPPORTED_OPS:
                raise UnsupportedOperator(node.op_type)
            for inp in node.inputs:
                if inp and inp not in known:
                    raise DanglingInput(inp)
            for out in node.outputs:
                if out in seen_outputs:
                    raise MalformedFile(f"duplicate node output {out!r}")
                seen_outputs.add(out)
                known.add(out)
        for name, _ in self.graph_outputs:
            if name not in known:
                raise DanglingInput(name)
        return self


# ---------------------------------------------------------------------------
# protobuf wire format

def _varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        if pos >= len(buf):
            raise MalformedFile("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift >= 70:
            raise MalformedFile("varint too long")


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= 1 << 63 else v


def _fields(buf: bytes) -> Iterator[tuple[int, int, Any]]:
    """Yield (field_number, wire_type, value) for one message body."""
    pos, end = 0, len(buf)
    while pos < end:
        tag, pos = _varint(buf, pos)
        num, wt = tag >> 3, tag & 7
        if num == 0:
            raise MalformedFile("field number 0")
        if wt == 0:
            val, pos = _varint(buf, pos)
        elif wt == 1:
            if pos + 8 > end:
                raise MalformedFile("truncated fixed64")
            val, pos = buf[pos:pos + 8], pos + 8
        elif wt == 2:
            n, pos = _varint(buf, pos)
            if pos + n > end:
                raise MalformedFile(f"length-delimited field {num} overruns buffer")
            val, pos = buf[pos:pos + n], pos + n
        elif wt == 5:
            if pos + 4 > end:
                raise MalformedFile("truncated fixed32")
            val, pos = buf[pos:pos + 4], pos + 4
        else:
            raise MalformedFile(f"unsupported wire type {wt} for field {num}")
        yield num, wt, val


def _int64s(wt: int, val) -> list[int]:
    if wt == 0:
        return [_signed64(val)]
    if wt == 2:
        out, pos = [], 0
        while pos < len(val):
            v, pos = _varint(val, pos)
            out.append(_signed64(v))
        return out
    raise MalformedFile("bad wire type for int64 field")


def _floats(wt: int, val) -> list[float]:
    if wt == 5:
        return [struct.unpack("<f", val)[0]]
    if wt == 2:
        if len(val) % 4:
            raise MalformedFile("packed float payload not a multiple of 4")
        return list(np.frombuffer(val, dtype="<f4").astype(np.float64))
    raise MalformedFile("bad wire type for float field")


def _text(wt: int, val) -> str:
    if wt != 2:
        raise MalformedFile("bad wire type for string field")
    try:
        return bytes(val).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile("invalid utf-8 string") from exc


def _msg(wt: int, val) -> bytes:
    if wt != 2:
        raise MalformedFile("bad wire type for embedded message")
    return val


def _decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype = 0
    name = ""
    raw = None
    float_data: list[float] = []
    int64_data: list[int] = []
    external = False
    for num, wt, val in _fields(buf):
        if num == 1:
            dims += _int64s(wt, val)
        elif num == 2:
            dtype = val
        elif num == 4:
            float_data += _floats(wt, val)
        elif num == 7:
            int64_data += _int64s(wt, val)
        elif num == 8:
            name = _text(wt, val)
        elif num == 9:
            raw = bytes(_msg(wt, val))
        elif num == 14:
            external = val == 1
    if external:
        raise UnsupportedTensorType(f"tensor {name!r} uses external data")
    count = math.prod(dims)
    if dtype == _FLOAT:
        if raw is not None:
            if len(raw) != 4 * count:
                raise MalformedFile(
                    f"tensor {name!r}: raw_data has {len(raw)} bytes, expected {4 * count}"
                )
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        else:
            if len(float_data) != count:
                raise MalformedFile(f"tensor {name!r}: float_data length mismatch")
            arr = np.asarray(float_data, dtype=np.float32)
        return name, arr.reshape(dims)
    if dtype == _INT64:
        if raw is not None:
            if len(raw) != 8 * count:
                raise MalformedFile(f"tensor {name!r}: raw_data length mismatch")
            arr = np.frombuffer(raw, dtype="<i8").astype(np.int64)
        else:
            arr = np.asarray(int64_data, dtype=np.int64)
        return name, arr.reshape(dims)
    raise UnsupportedTensorType(f"tensor {name!r} has ONNX data_type {dtype}")


def _decode_attribute(buf: bytes) -> tuple[str, Any]:
    name = ""
    atype = 0
    f = i = s = t = None
    floats: list[float] = []
    ints: list[int] = []
    for num, wt, val in _fields(buf):
        if num == 1:
            name = _text(wt, val)
        elif num == 2:
            f = _floats(wt, val)[0]
        elif num == 3:
            i = _signed64(val) if wt == 0 else _int64s(wt, val)[0]
        elif num == 4:
            s = _text(wt, val)
        elif num == 5:
            t = _decode_tensor(_msg(wt, val))[1]
        elif num == 7:
            floats += _floats(wt, val)
        elif num == 8:
            ints += _int64s(wt, val)
        elif num == 20:
            atype = val
    if atype == _ATTR_FLOAT:
        return name, float(f if f is not None else 0.0)
    if atype == _ATTR_INT:
        return name, int(i if i is not None else 0)
    if atype == _ATTR_STRING:
        return name, s if s is not None else ""
    if atype == _ATTR_TENSOR:
        if t is None:
            raise MalformedFile(f"attribute {name!r} missing tensor")
        return name, t
    if atype == _ATTR_FLOATS:
        return name, tuple(float(x) for x in floats)
    if atype == _ATTR_INTS:
        return name, tuple(int(x) for x in ints)
    raise MalformedFile(f"attribute {name!r} has unsupported type {atype}")


def _decode_node(buf: bytes) -> RawNode:
    node = RawNode(op_type="", inputs=[], outputs=[])
    has_op = False
    for num, wt, val in _fields(buf):
        if num == 1:
            node.inputs.append(_text(wt, val))
        elif num == 2:
            node.outputs.append(_text(wt, val))
        elif num == 3:
            node.name = _text(wt, val)
        elif num == 4:
            node.op_type = _text(wt, val)
            has_op = True
        elif num == 5:
            key, value = _decode_attribute(_msg(wt, val))
            node.attributes[key] = value
        elif num == 7:
            domain = _text(wt, val)
            if domain not in ("", "ai.onnx"):
                node.op_type = f"{domain}::{node.op_type}"
    if not has_op:
        raise MalformedFile("node without op_type")
    if node.op_type not in SUPPORTED_OPS:
        raise UnsupportedOperator(node.op_type)
    return node


def _decode_value_info(buf: bytes) -> tuple[str, Shape]:
    name = ""
    dims: list = []
    for num, wt, val in _fields(buf):
        if num == 1:
            name = _text(wt, val)
        elif num == 2:
            for n2, w2, v2 in _fields(_msg(wt, val)):
                if n2 != 1:
                    continue
                for n3, w3, v3 in _fields(_msg(w2, v2)):
                    if n3 == 1 and v3 != _FLOAT:
                        raise UnsupportedTensorType(f"graph value {name!r} has elem_type {v3}")
                    if n3 != 2:
                        continue
                    for n4, w4, v4 in _fields(_msg(w3, v3)):
                        if n4 != 1:
                            continue
                        dim = None
                        for n5, w5, v5 in _fields(_msg(w4, v4)):
                            if n5 == 1:
                                dim = _signed64(v5)
                        dims.append(dim)
    return name, tuple(dims)


def _fold_reshape_shapes(nodes: list[RawNode], tensors: dict[str, np.ndarray]) -> None:
    # int64 tensors are only legal as the target shape of a Reshape; they
    # become a ``shape`` attribute so the initializer map stays float32-only.
    consumers: dict[str, list[tuple[RawNode, int]]] = {}
    for node in nodes:
        for idx, inp in enumerate(node.inputs):
            consumers.setdefault(inp, []).append((node, idx))
    for name in [n for n, a in tensors.items() if a.dtype == np.int64]:
        uses = consumers.get(name, [])
        if not uses or any(n.op_type != "Reshape" or idx != 1 for n, idx in uses):
            raise UnsupportedTensorType(f"initializer {name!r} is int64")
        for node, _ in uses:
            node.attributes["shape"] = tuple(int(v) for v in tensors[name].reshape(-1))
            node.inputs = node.inputs[:1]
        del tensors[name]


def decode_onnx(data: bytes) -> RawModel:
    """Decode a serialized ONNX ModelProto."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MalformedFile("expected a binary buffer")
    data = bytes(data)
    graph_buf = None
    opset = None
    for num, wt, val in _fields(data):
        if num == 7:
            if graph_buf is not None:
                raise MalformedFile("model contains more than one graph")
            graph_buf = _msg(wt, val)
        elif num == 8:
            domain, version = "", None
            for n2, w2, v2 in _fields(_msg(wt, val)):
                if n2 == 1:
                    domain = _text(w2, v2)
                elif n2 == 2:
                    version = v2
            if domain in ("", "ai.onnx") and version is not None:
                opset = int(version)
    if graph_buf is None:
        raise MalformedFile("model has no graph")

    name = ""
    nodes: list[RawNode] = []
    tensors: dict[str, np.ndarray] = {}
    inputs: list[tuple[str, Shape]] = []
    outputs: list[tuple[str, Shape]] = []
    for num, wt, val in _fields(graph_buf):
        if num == 1:
            nodes.append(_decode_node(_msg(wt, val)))
        elif num == 2:
            name = _text(wt, val)
        elif num == 5:
            tname, arr = _decode_tensor(_msg(wt, val))
            tensors[tname] = arr
        elif num == 11:
            inputs.append(_decode_value_info(_msg(wt, val)))
        elif num == 12:
            outputs.append(_decode_value_info(_msg(wt, val)))
        elif num == 15:
            raise UnsupportedTensorType("sparse initializers are not supported")
    _fold_reshape_shapes(nodes, tensors)
    # older exporters list initializers among the graph inputs
    inputs = [(n, s) for n, s in inputs if n not in tensors]
    model = RawModel(name, nodes, tensors, inputs, outputs, opset or DEFAULT_OPSET)
    return model.validate()


# ---------------------------------------------------------------------------
# JSON mirror

def _shape_json(shape: Shape) -> list:
    return [None if d is None else int(d) for d in shape]


def _attr_to_json(value):
    if isinstance(value, np.ndarray):
        if value.dtype != np.float32:
            raise UnsupportedTensorType("tensor attributes must be float32")
        return {"shape": list(value.shape), "data": [float(v) for v in value.reshape(-1)]}
    if isinstance(value, tuple):
        return list(value)
    return value


def encode_json_mirror(model: RawModel) -> str:
    doc = {
        "graph_name": model.graph_name,
        "opset_version": model.opset_version,
        "inputs": [[n, _shape_json(s)] for n, s in model.graph_inputs],
        "outputs": [[n, _shape_json(s)] for n, s in model.graph_outputs],
        "initializers": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
            for name, arr in model.initializers.items()
        },
        "nodes": [
            {
                "name": node.name,
                "op_type": node.op_type,
                "inputs": list(node.inputs),
                "outputs": list(node.outputs),
                "attributes": {k: _attr_to_json(v) for k, v in node.attributes.items()},
            }
            for node in model.nodes
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{path}.{key}" if path else key)
    return obj[key]


def _json_shape(value, path: str) -> Shape:
    if not isinstance(value, list):
        raise SchemaViolation(path)
    for i, d in enumerate(value):
        if d is not None and (not isinstance(d, int) or isinstance(d, bool)):
            raise SchemaViolation(f"{path}[{i}]")
    return tuple(value)


def _json_tensor(value, path: str) -> np.ndarray:
    shape = _req(value, "shape", path)
    data = _req(value, "data", path)
    if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise SchemaViolation(f"{path}.shape")
    if not isinstance(data, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in data
    ):
        raise SchemaViolation(f"{path}.data")
    if len(data) != math.prod(shape):
        raise SchemaViolation(f"{path}.data")
    return np.asarray(data, dtype=np.float32).reshape(shape)


def _json_attr(value, path: str):
    if isinstance(value, bool):
        raise SchemaViolation(path)
    if isinstance(value, (int, float, str)):
        return value
    if isinstance(value, dict):
        return _json_tensor(value, path)
    if isinstance(value, list):
        if all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return tuple(value)
        if all(isinstance(v, float) for v in value):
            return tuple(value)
    raise SchemaViolation(path)


def _json_value_infos(items, path: str) -> list[tuple[str, Shape]]:
    if not isinstance(items, list):
        raise SchemaViolation(path)
    out = []
    for i, item in enumerate(items):
        if not (isinstance(item, list) and len(item) == 2 and isinstance(item[0], str)):
            raise SchemaViolation(f"{path}[{i}]")
        out.append((item[0], _json_shape(item[1], f"{path}[{i}][1]")))
    return out


def decode_json_mirror(text: str) -> RawModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"<document>: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("<document>")
    nodes_doc = _req(doc, "nodes", "")
    if not isinstance(nodes_doc, list):
        raise SchemaViolation("nodes")
    nodes = []
    for i, nd in enumerate(nodes_doc):
        path = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise SchemaViolation(path)
        op_type = _req(nd, "op_type", path)
        if not isinstance(op_type, str):
            raise SchemaViolation(f"{path}.op_type")
        lists = {}
        for key in ("inputs", "outputs"):
            val = _req(nd, key, path)
            if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
                raise SchemaViolation(f"{path}.{key}")
            lists[key] = list(val)
        attrs_doc = nd.get("attributes", {})
        if not isinstance(attrs_doc, dict):
            raise SchemaViolation(f"{path}.attributes")
        attrs = {k: _json_attr(v, f"{path}.attributes.{k}") for k, v in attrs_doc.items()}
        name = nd.get("name", "")
        if not isinstance(name, str):
            raise SchemaViolation(f"{path}.name")
        if op_type not in SUPPORTED_OPS:
            raise UnsupportedOperator(op_type)
        nodes.append(RawNode(op_type, lists["inputs"], lists["outputs"], attrs, name))

    inits_doc = _req(doc, "initializers", "")
    if not isinstance(inits_doc, dict):
        raise SchemaViolation("initializers")
    inits = {k: _json_tensor(v, f"initializers.{k}") for k, v in inits_doc.items()}
    inputs = _json_value_infos(_req(doc, "inputs", ""), "inputs")
    outputs = _json_value_infos(_req(doc, "outputs", ""), "outputs")
    opset = doc.get("opset_version", DEFAULT_OPSET)
    if not isinstance(opset, int) or isinstance(opset, bool):
        raise SchemaViolation("opset_version")
    name = doc.get("graph_name", "")
    if not isinstance(name, str):
        raise SchemaViolation("graph_name")
    return RawModel(name, nodes, inits, inputs, outputs, opset).validate()


def load_model(path) -> RawModel:
    """Decode ``path`` by extension: ``.json`` is the mirror, anything else binary."""
    from pathlib import Path

    p = Path(path)
    if p.suffix.lower() == ".json":
        return decode_json_mirror(p.read_text(encoding="utf-8"))
    return decode_onnx(p.read_bytes())
