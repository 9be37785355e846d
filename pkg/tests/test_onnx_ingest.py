import json

import numpy as np
import pytest

from onnxflow import onnx_ingest as oi
from onnxflow.errors import (
    DanglingInput,
    MalformedFile,
    SchemaViolation,
    UnsupportedOperator,
    UnsupportedTensorType,
)

from . import pb
from .conftest import FIXTURE_JSON, FIXTURE_ONNX

FIXTURE_OPS = ["Conv", "MaxPool", "BatchNormalization", "Relu",
               "Conv", "MaxPool", "BatchNormalization", "Relu", "Flatten", "Gemm"]


def _single_conv(raw=True):
    w = np.arange(16 * 9, dtype=np.float32).reshape(16, 1, 3, 3) / 100
    return pb.model(
        [pb.node("Conv", ["x", "w"], ["y"], [pb.attr_ints("kernel_shape", [3, 3])])],
        [pb.tensor("w", w, raw=raw)],
        [("x", [1, 1, 28, 28])], [("y", [1, 16, 26, 26])],
    ), w


def test_single_conv_file():
    data, w = _single_conv()
    m = oi.decode_onnx(data)
    assert [n.op_type for n in m.nodes] == ["Conv"]
    assert list(m.initializers) == ["w"]
    assert m.initializers["w"].shape == (16, 1, 3, 3)
    assert m.initializers["w"].dtype == np.float32
    assert np.array_equal(m.initializers["w"], w)
    assert m.nodes[0].attributes == {"kernel_shape": (3, 3)}
    assert m.graph_inputs == [("x", (1, 1, 28, 28))]
    assert m.opset_version == 13


def test_float_data_field_matches_raw_data():
    assert oi.decode_onnx(_single_conv(raw=True)[0]) == oi.decode_onnx(_single_conv(raw=False)[0])


def test_symbolic_dimension_and_scalar_attributes():
    data = pb.model(
        [pb.node("BatchNormalization", ["x", "s", "b", "m", "v"], ["y"],
                 [pb.attr_float("epsilon", 0.25)], name="bn")],
        [pb.tensor(n, np.ones(2, np.float32)) for n in "sbmv"],
        [("x", ["N", 2, 4, 4])], [("y", ["N", 2, 4, 4])], opset=11,
    )
    m = oi.decode_onnx(data)
    assert m.graph_inputs == [("x", (None, 2, 4, 4))]
    assert m.nodes[0].name == "bn"
    assert m.nodes[0].attributes["epsilon"] == pytest.approx(0.25)
    assert m.opset_version == 11


def test_unsupported_operator():
    data = pb.model([pb.node("LSTM", ["x"], ["y"])], [], [("x", [1, 4])], [("y", [1, 4])])
    with pytest.raises(UnsupportedOperator) as exc:
        oi.decode_onnx(data)
    assert exc.value.op_type == "LSTM"


def test_dangling_input():
    data = pb.model([pb.node("Relu", ["nowhere"], ["y"])], [], [("x", [1, 4])], [("y", [1, 4])])
    with pytest.raises(DanglingInput, match="nowhere"):
        oi.decode_onnx(data)


def test_int64_initializer_outside_reshape_rejected():
    data = pb.model(
        [pb.node("Relu", ["x"], ["y"]), pb.node("Add", ["y", "k"], ["z"])],
        [pb.tensor("k", np.array([1, 2], dtype=np.int64))],
        [("x", [1, 2])], [("z", [1, 2])],
    )
    with pytest.raises(UnsupportedTensorType):
        oi.decode_onnx(data)


def test_reshape_shape_initializer_becomes_attribute():
    data = pb.model(
        [pb.node("Reshape", ["x", "shape"], ["y"])],
        [pb.tensor("shape", np.array([1, -1], dtype=np.int64))],
        [("x", [1, 2, 3, 3])], [("y", [1, 18])],
    )
    m = oi.decode_onnx(data)
    assert m.initializers == {}
    assert m.nodes[0].inputs == ["x"]
    assert m.nodes[0].attributes["shape"] == (1, -1)


@pytest.mark.parametrize("blob", [b"\x0a", b"\x3a\x05ab", b"\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff", b""])
def test_malformed_bytes(blob):
    with pytest.raises(MalformedFile):
        oi.decode_onnx(blob)


def test_fixture_node_sequence(fixture_raw):
    assert [n.op_type for n in fixture_raw.nodes] == FIXTURE_OPS
    assert fixture_raw.graph_inputs == [("input", (1, 1, 28, 28))]
    assert fixture_raw.graph_outputs == [("logits", (1, 10))]
    assert all(a.dtype == np.float32 for a in fixture_raw.initializers.values())


def test_fixture_binary_equals_json_mirror(fixture_raw):
    assert oi.load_model(FIXTURE_JSON) == fixture_raw


def test_mirror_roundtrip(fixture_raw):
    assert oi.decode_json_mirror(oi.encode_json_mirror(fixture_raw)) == fixture_raw


def test_empty_passthrough_mirror():
    text = '{"nodes":[],"initializers":{},"inputs":[["x",[1,1,28,28]]],"outputs":[["x",[1,1,28,28]]]}'
    m = oi.decode_json_mirror(text)
    assert m.nodes == [] and m.opset_version == 13
    doc = json.loads(oi.encode_json_mirror(m))
    assert doc["nodes"] == []
    assert oi.decode_json_mirror(oi.encode_json_mirror(m)) == m


def test_mirror_single_relu():
    m = oi.RawModel("g", [oi.RawNode("Relu", ["x"], ["y"])], {}, [("x", (1, 4))], [("y", (1, 4))])
    doc = json.loads(oi.encode_json_mirror(m))
    assert [n["op_type"] for n in doc["nodes"]] == ["Relu"]


@pytest.mark.parametrize("doc,path", [
    ({"nodes": [{"inputs": [], "outputs": []}], "initializers": {}, "inputs": [], "outputs": []},
     "nodes[0].op_type"),
    ({"nodes": [], "initializers": {"w": {"shape": [2], "data": [1.0]}}, "inputs": [], "outputs": []},
     "initializers.w.data"),
    ({"nodes": [], "initializers": {}, "inputs": [["x", "bad"]], "outputs": []}, "inputs[0][1]"),
    ({"initializers": {}, "inputs": [], "outputs": []}, "nodes"),
])
def test_mirror_schema_violations(doc, path):
    with pytest.raises(SchemaViolation) as exc:
        oi.decode_json_mirror(json.dumps(doc))
    assert exc.value.path == path


def test_mirror_unsupported_operator():
    doc = {"nodes": [{"op_type": "LSTM", "inputs": ["x"], "outputs": ["y"]}],
           "initializers": {}, "inputs": [["x", [1]]], "outputs": [["y", [1]]]}
    with pytest.raises(UnsupportedOperator):
        oi.decode_json_mirror(json.dumps(doc))


def test_decoder_agrees_with_onnx_package():
    onnx = pytest.importorskip("onnx")
    from onnx import numpy_helper

    proto = onnx.load(str(FIXTURE_ONNX))
    ours = oi.decode_onnx(FIXTURE_ONNX.read_bytes())
    assert [n.op_type for n in proto.graph.node] == [n.op_type for n in ours.nodes]
    for init in proto.graph.initializer:
        if init.name in ours.initializers:
            assert np.array_equal(numpy_helper.to_array(init), ours.initializers[init.name])
    for pn, on in zip(proto.graph.node, ours.nodes):
        assert list(pn.output) == on.outputs
