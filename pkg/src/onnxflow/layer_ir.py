"""Layer-level intermediate representation built from a :class:`RawModel`.

The IR is a single feed-forward chain of layer objects with resolved
hyperparameters and inferred shapes. Batch normalization is folded into a
per-channel affine ``ScaleShift`` layer.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, MissingWeights, NonLinearTopology, ShapeMismatch
from .onnx_ingest import RawModel, RawNode

LAYER_KINDS = ("Conv", "MaxPool", "ScaleShift", "Relu", "FullyConnected", "Flatten")
_NAME_PREFIX = {"Conv": "conv", "MaxPool": "pool", "ScaleShift": "bn", "Relu": "relu",
                "FullyConnected": "fc", "Flatten": "flatten"}


@dataclass(eq=False)
class LayerNode:
    kind: str
    name: str
    hyperparams: dict = field(default_factory=dict)
    input_shape: tuple = ()
    output_shape: tuple = ()
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, LayerNode):
            return NotImplemented
        if (self.kind, self.name, self.hyperparams, self.input_shape, self.output_shape) != (
            other.kind, other.name, other.hyperparams, other.input_shape, other.output_shape,
        ):
            return False
        for attr in ("weights", "bias", "scale"):
            a, b = getattr(self, attr), getattr(other, attr)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True


@dataclass(eq=False)
class ModelIR:
    layers: list[LayerNode]
    input_shape: tuple
    output_shape: tuple = ()
    source_name: str = ""

    def __eq__(self, other):
        if not isinstance(other, ModelIR):
            return NotImplemented
        return (
            self.layers == other.layers
            and self.input_shape == other.input_shape
            and self.output_shape == other.output_shape
            and self.source_name == other.source_name
        )

    def kinds(self) -> list[str]:
        return [layer.kind for layer in self.layers]


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def fold_batchnorm(scale, B, mean, var, epsilon: float):
    """Fold inference batch norm into ``y = a * x + b`` per channel."""
    scale, B, mean, var = (np.asarray(v, dtype=np.float64) for v in (scale, B, mean, var))
    if not (scale.shape == B.shape == mean.shape == var.shape) or scale.ndim != 1:
        raise LengthMismatch(
            f"batchnorm vectors have shapes {scale.shape}, {B.shape}, {mean.shape}, {var.shape}"
        )
    a = scale / np.sqrt(var + epsilon)
    b = B - mean * a
    return a, b


# ---------------------------------------------------------------------------
# shape inference

def _infer_layer(layer: LayerNode, shape: tuple) -> tuple:
    hp = layer.hyperparams
    kind = layer.kind
    if kind == "Conv":
        if len(shape) != 3:
            raise ShapeMismatch(layer.name, f"expects (C, H, W), got {shape}")
        c, h, w = shape
        k, s, p, co = hp["kernel"], hp["stride"], hp["pad"], hp["out_channels"]
        if layer.weights is None:
            raise MissingWeights(layer.name)
        if layer.weights.shape != (co, c, k, k):
            raise ShapeMismatch(layer.name, f"weights {layer.weights.shape} vs input channels {c}")
        ho, wo = conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)
        if ho < 1 or wo < 1:
            raise ShapeMismatch(layer.name, f"kernel {k} larger than padded input {shape}")
        return (co, ho, wo)
    if kind == "MaxPool":
        if len(shape) != 3:
            raise ShapeMismatch(layer.name, f"expects (C, H, W), got {shape}")
        c, h, w = shape
        win, s = hp["window"], hp["stride"]
        ho, wo = conv_output_size(h, win, s, 0), conv_output_size(w, win, s, 0)
        if ho < 1 or wo < 1:
            raise ShapeMismatch(layer.name, f"window {win} larger than input {shape}")
        return (c, ho, wo)
    if kind == "ScaleShift":
        if layer.scale is None or layer.bias is None:
            raise MissingWeights(layer.name)
        if len(layer.scale) != shape[0]:
            raise ShapeMismatch(layer.name, f"{len(layer.scale)} channels vs input {shape}")
        return shape
    if kind == "Relu":
        return shape
    if kind == "Flatten":
        return (math.prod(shape),)
    if kind == "FullyConnected":
        fi, fo = hp["in_features"], hp["out_features"]
        if len(shape) != 1 or shape[0] != fi:
            raise ShapeMismatch(layer.name, f"expects ({fi},), got {shape}")
        if layer.weights is None:
            raise MissingWeights(layer.name)
        if layer.weights.shape != (fo, fi):
            raise ShapeMismatch(layer.name, f"weights {layer.weights.shape}")
        return (fo,)
    raise ShapeMismatch(layer.name, f"unknown layer kind {kind}")


def infer_shapes(ir: ModelIR) -> ModelIR:
    shape = tuple(ir.input_shape)
    layers = []
    for layer in ir.layers:
        out = _infer_layer(layer, shape)
        layers.append(dataclasses.replace(layer, input_shape=shape, output_shape=out,
                                          hyperparams=dict(layer.hyperparams)))
        shape = out
    return ModelIR(layers, tuple(ir.input_shape), shape, ir.source_name)


# ---------------------------------------------------------------------------
# RawModel -> IR

def _ints(node: RawNode, key: str, default):
    return tuple(node.attributes.get(key, default))


def _square(node: RawNode, key: str, values: tuple, what: str) -> int:
    if len(set(values)) != 1:
        raise NonLinearTopology(f"{node.name or node.op_type}: non-uniform {what} {values}")
    return int(values[0])


def _conv_layer(node: RawNode, name: str, inits: dict) -> LayerNode:
    if len(node.inputs) < 2 or node.inputs[1] not in inits:
        raise MissingWeights(name)
    w = inits[node.inputs[1]]
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(name, f"conv weights must be (O, I, k, k), got {w.shape}")
    if node.attributes.get("group", 1) != 1:
        raise NonLinearTopology(f"{name}: grouped convolution")
    if any(d != 1 for d in _ints(node, "dilations", (1, 1))):
        raise NonLinearTopology(f"{name}: dilated convolution")
    if node.attributes.get("auto_pad", "NOTSET") not in ("NOTSET", "VALID"):
        raise NonLinearTopology(f"{name}: auto_pad {node.attributes['auto_pad']}")
    k = w.shape[2]
    if tuple(_ints(node, "kernel_shape", (k, k))) != (k, k):
        raise ShapeMismatch(name, "kernel_shape disagrees with weights")
    stride = _square(node, "strides", _ints(node, "strides", (1, 1)), "strides")
    pad = _square(node, "pads", _ints(node, "pads", (0, 0, 0, 0)), "pads")
    if len(node.inputs) > 2 and node.inputs[2]:
        if node.inputs[2] not in inits:
            raise MissingWeights(name)
        bias = inits[node.inputs[2]]
    else:
        bias = np.zeros(w.shape[0], dtype=np.float32)
    return LayerNode(
        "Conv", name,
        {"kernel": k, "stride": stride, "pad": pad, "out_channels": int(w.shape[0])},
        weights=w.astype(np.float32), bias=bias.astype(np.float32),
    )


def _maxpool_layer(node: RawNode, name: str) -> LayerNode:
    if "kernel_shape" not in node.attributes:
        raise ShapeMismatch(name, "MaxPool without kernel_shape")
    window = _square(node, "kernel_shape", _ints(node, "kernel_shape", ()), "kernel_shape")
    stride = _square(node, "strides", _ints(node, "strides", (1, 1)), "strides")
    if any(_ints(node, "pads", (0, 0, 0, 0))) or node.attributes.get("ceil_mode", 0):
        raise NonLinearTopology(f"{name}: padded or ceil-mode pooling")
    if any(d != 1 for d in _ints(node, "dilations", (1, 1))):
        raise NonLinearTopology(f"{name}: dilated pooling")
    return LayerNode("MaxPool", name, {"window": window, "stride": stride})


def _bn_layer(node: RawNode, name: str, inits: dict) -> LayerNode:
    if len(node.inputs) != 5 or any(i not in inits for i in node.inputs[1:]):
        raise MissingWeights(name)
    scale, B, mean, var = (inits[i] for i in node.inputs[1:])
    eps = float(node.attributes.get("epsilon", 1e-5))
    a, b = fold_batchnorm(scale, B, mean, var, eps)
    return LayerNode("ScaleShift", name, {"channels": len(a)},
                     scale=a.astype(np.float32), bias=b.astype(np.float32))


def _gemm_layer(node: RawNode, name: str, inits: dict) -> LayerNode:
    attrs = node.attributes
    if float(attrs.get("alpha", 1.0)) != 1.0 or float(attrs.get("beta", 1.0)) != 1.0:
        raise NonLinearTopology(f"{name}: Gemm alpha/beta must be 1")
    if attrs.get("transA", 0):
        raise NonLinearTopology(f"{name}: Gemm transA unsupported")
    if len(node.inputs) < 2 or node.inputs[1] not in inits:
        raise MissingWeights(name)
    w = inits[node.inputs[1]]
    w = w if attrs.get("transB", 0) else w.T
    bias = None
    if len(node.inputs) > 2 and node.inputs[2]:
        if node.inputs[2] not in inits:
            raise MissingWeights(name)
        bias = inits[node.inputs[2]].reshape(-1)
    return _fc(name, w, bias)


def _fc(name: str, w: np.ndarray, bias) -> LayerNode:
    if w.ndim != 2:
        raise ShapeMismatch(name, f"FC weights must be 2-D, got {w.shape}")
    fo, fi = w.shape
    if bias is None:
        bias = np.zeros(fo, dtype=np.float32)
    if bias.shape != (fo,):
        raise ShapeMismatch(name, f"bias {bias.shape} vs {fo} outputs")
    return LayerNode("FullyConnected", name, {"in_features": int(fi), "out_features": int(fo)},
                     weights=np.ascontiguousarray(w, dtype=np.float32),
                     bias=bias.astype(np.float32))


def _data_inputs(node: RawNode, inits: dict) -> list[str]:
    return [i for i in node.inputs if i and i not in inits]


def build_ir(model: RawModel) -> ModelIR:
    """Lower a validated RawModel into a shape-annotated layer chain."""
    inits = model.initializers
    if len(model.graph_inputs) != 1 or len(model.graph_outputs) != 1:
        raise NonLinearTopology("exactly one graph input and one graph output are required")
    in_name, in_shape = model.graph_inputs[0]
    if any(d is None for d in in_shape):
        raise ShapeMismatch(in_name, f"symbolic input dimensions {in_shape}")
    shape = tuple(in_shape[1:]) if len(in_shape) in (2, 4) else tuple(in_shape)
    if len(in_shape) in (2, 4) and in_shape[0] != 1:
        raise ShapeMismatch(in_name, "batch dimension must be 1")

    # consumers per value, to reject fan-out
    uses: dict[str, int] = {}
    for node in model.nodes:
        for inp in _data_inputs(node, inits):
            uses[inp] = uses.get(inp, 0) + 1

    layers: list[LayerNode] = []
    current = in_name
    nodes = list(model.nodes)
    i = 0
    while i < len(nodes):
        node = nodes[i]
        name = node.name or f"{node.op_type.lower()}{i}"
        data = _data_inputs(node, inits)
        if node.op_type == "Add" and layers and layers[-1].kind == "FullyConnected":
            raise NonLinearTopology(f"{name}: Add must directly follow MatMul")
        if data != [current]:
            raise NonLinearTopology(f"{name}: inputs {data} do not continue the chain at {current!r}")
        if len(node.outputs) != 1:
            raise NonLinearTopology(f"{name}: {len(node.outputs)} outputs")
        if uses.get(current, 0) > 1:
            raise NonLinearTopology(f"value {current!r} feeds several nodes")
        op = node.op_type
        if op == "Conv":
            layers.append(_conv_layer(node, name, inits))
        elif op == "MaxPool":
            layers.append(_maxpool_layer(node, name))
        elif op == "BatchNormalization":
            layers.append(_bn_layer(node, name, inits))
        elif op == "Relu":
            layers.append(LayerNode("Relu", name))
        elif op == "Flatten":
            if node.attributes.get("axis", 1) != 1:
                raise NonLinearTopology(f"{name}: Flatten axis must be 1")
            layers.append(LayerNode("Flatten", name))
        elif op == "Reshape":
            target = tuple(node.attributes.get("shape", ()))
            if len(target) != 2 or target[0] not in (1, 0):
                raise NonLinearTopology(f"{name}: only (1, -1)-style flattening reshapes supported")
            layers.append(LayerNode("Flatten", name, {"target": target}))
        elif op == "Gemm":
            layers.append(_gemm_layer(node, name, inits))
        elif op == "MatMul":
            if len(node.inputs) != 2 or node.inputs[1] not in inits:
                raise MissingWeights(name)
            w = inits[node.inputs[1]].T
            bias = None
            out = node.outputs[0]
            nxt = nodes[i + 1] if i + 1 < len(nodes) else None
            if nxt is not None and nxt.op_type == "Add" and out in nxt.inputs:
                others = [x for x in nxt.inputs if x != out]
                if len(others) != 1 or others[0] not in inits:
                    raise NonLinearTopology(f"{nxt.name or 'Add'}: residual Add unsupported")
                bias = inits[others[0]].reshape(-1)
                if uses.get(out, 0) > 1:
                    raise NonLinearTopology(f"value {out!r} feeds several nodes")
                node = nxt
                i += 1
            layers.append(_fc(name, w, bias))
        elif op == "Add":
            raise NonLinearTopology(f"{name}: standalone Add (residual connection)")
        else:  # pragma: no cover - decode already rejects these
            raise NonLinearTopology(f"{name}: unsupported op {op}")
        current = node.outputs[0]
        i += 1

    if model.graph_outputs[0][0] != current:
        raise NonLinearTopology("graph output is not the end of the layer chain")
    counts: dict[str, int] = {}
    for layer in layers:
        prefix = _NAME_PREFIX[layer.kind]
        layer.name = f"{prefix}{counts.get(prefix, 0)}"
        counts[prefix] = counts.get(prefix, 0) + 1
    # Reshape target check needs the inferred shape
    ir = infer_shapes(ModelIR(layers, shape, (), model.graph_name))
    for layer in ir.layers:
        t = layer.hyperparams.get("target")
        if t is not None and t[1] not in (-1, layer.output_shape[0]):
            raise ShapeMismatch(layer.name, f"reshape target {t} vs {layer.output_shape}")
    return ir


# ---------------------------------------------------------------------------
# JSON dump for --dump-ir

def _arr(a):
    return None if a is None else {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unarr(d):
    return None if d is None else np.asarray(d["data"], dtype=np.float32).reshape(d["shape"])


def ir_to_json(ir: ModelIR) -> str:
    doc = {
        "source_name": ir.source_name,
        "input_shape": list(ir.input_shape),
        "output_shape": list(ir.output_shape),
        "layers": [
            {
                "kind": l.kind,
                "name": l.name,
                "hyperparams": {k: list(v) if isinstance(v, tuple) else v
                                for k, v in l.hyperparams.items()},
                "input_shape": list(l.input_shape),
                "output_shape": list(l.output_shape),
                "weights": _arr(l.weights),
                "bias": _arr(l.bias),
                "scale": _arr(l.scale),
            }
            for l in ir.layers
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def ir_from_json(text: str) -> ModelIR:
    doc = json.loads(text)
    layers = [
        LayerNode(
            d["kind"], d["name"],
            {k: tuple(v) if isinstance(v, list) else v for k, v in d["hyperparams"].items()},
            tuple(d["input_shape"]), tuple(d["output_shape"]),
            _unarr(d["weights"]), _unarr(d["bias"]), _unarr(d["scale"]),
        )
        for d in doc["layers"]
    ]
    return ModelIR(layers, tuple(doc["input_shape"]), tuple(doc["output_shape"]), doc["source_name"])
