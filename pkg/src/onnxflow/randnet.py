"""Random small chain models for property tests and acceptance runs."""

from __future__ import annotations

import numpy as np

from .layer_ir import LayerNode, ModelIR, conv_output_size, infer_shapes
from .quantizer import ALLOWED_BITS, QuantConfig, QuantizedModel, quantize_model

KERNELS = (1, 3, 5)
STRIDES = (1, 2)
MAX_CHANNELS = 8
MAX_SIDE = 16


def _conv(rng, name, c, h, w):
    choices = [k for k in KERNELS if k <= h and k <= w] or [1]
    k = int(rng.choice(choices))
    pad = int(rng.choice([0, k // 2]))
    s = int(rng.choice(STRIDES))
    co = int(rng.integers(1, MAX_CHANNELS + 1))
    weights = (rng.normal(size=(co, c, k, k)) / np.sqrt(c * k * k)).astype(np.float32)
    bias = rng.normal(scale=0.1, size=co).astype(np.float32)
    hp = {"kernel": k, "stride": s, "pad": pad, "out_channels": co}
    return LayerNode("Conv", name, hp, weights=weights, bias=bias), (
        co, conv_output_size(h, k, s, pad), conv_output_size(w, k, s, pad))


def random_ir(rng: np.random.Generator, n_layers: int | None = None) -> ModelIR:
    """1 to 3 compute layers over an input of at most 16x16 with at most 8 channels."""
    n_layers = n_layers or int(rng.integers(1, 4))
    c = int(rng.integers(1, MAX_CHANNELS + 1))
    h, w = (int(v) for v in rng.integers(3, MAX_SIDE + 1, size=2))
    input_shape = (c, h, w)
    layers: list[LayerNode] = []
    flat = False
    counts: dict[str, int] = {}

    def name(prefix):
        counts[prefix] = counts.get(prefix, 0) + 1
        return f"{prefix}{counts[prefix] - 1}"

    for i in range(n_layers):
        options = ["fc"] if flat else ["conv", "conv", "pool", "bn", "relu", "fc"]
        if not flat and min(h, w) < 2:
            options.remove("pool")
        kind = str(rng.choice(options))
        if kind == "conv":
            layer, (c, h, w) = _conv(rng, name("conv"), c, h, w)
        elif kind == "pool":
            win = int(rng.choice([2, 3] if min(h, w) >= 3 else [2]))
            s = int(rng.choice([1, 2]))
            layer = LayerNode("MaxPool", name("pool"), {"window": win, "stride": s})
            h, w = conv_output_size(h, win, s, 0), conv_output_size(w, win, s, 0)
        elif kind == "bn":
            layer = LayerNode("ScaleShift", name("bn"), {"channels": c},
                              scale=rng.uniform(0.2, 3.0, size=c).astype(np.float32)
                              * rng.choice([-1, 1], size=c).astype(np.float32),
                              bias=rng.normal(scale=0.5, size=c).astype(np.float32))
        elif kind == "relu":
            layer = LayerNode("Relu", name("relu"))
        else:
            if not flat:
                layers.append(LayerNode("Flatten", name("flatten")))
                flat = True
            fi = c * h * w
            fo = int(rng.integers(1, 11))
            layer = LayerNode(
                "FullyConnected", name("fc"), {"in_features": fi, "out_features": fo},
                weights=(rng.normal(size=(fo, fi)) / np.sqrt(fi)).astype(np.float32),
                bias=rng.normal(scale=0.1, size=fo).astype(np.float32),
            )
            c, h, w = fo, 1, 1
        layers.append(layer)
    return infer_shapes(ModelIR(layers, input_shape, source_name="random"))


def random_config(rng: np.random.Generator, calibration_images: int = 8) -> QuantConfig:
    act = int(rng.choice(ALLOWED_BITS[1:]))
    wgt = int(rng.choice(ALLOWED_BITS))
    return QuantConfig(act, wgt, calibration_images)


def random_model(rng: np.random.Generator, cfg: QuantConfig | None = None,
                 ir: ModelIR | None = None, name: str = "random") -> QuantizedModel:
    ir = ir or random_ir(rng)
    cfg = cfg or random_config(rng)
    calib = rng.uniform(0, 1, size=(cfg.calibration_images, *ir.input_shape)).astype(np.float32)
    return quantize_model(ir, cfg, calib, name=name)


def random_input_codes(rng: np.random.Generator, model: QuantizedModel) -> np.ndarray:
    """Input codes spread over the whole representable range of the input format."""
    fmt = model.input_format
    return rng.integers(fmt.min_code, fmt.max_code + 1, size=model.ir.input_shape, dtype=np.int64)


def random_variant(rng: np.random.Generator, model: QuantizedModel,
                   name: str = "variant") -> QuantizedModel:
    """A copy of ``model`` that differs in one place, so the two share a prefix and a suffix.

    Either one parameterized layer gets new codes (same formats), one layer's
    weights are re-encoded at another width, or a Relu is inserted.
    """
    import copy
    import dataclasses

    from .quantizer import QuantizedTensor, finalize, quantize_tensor

    variant = copy.deepcopy(model)
    variant.name = name
    param_layers = [n for n in variant.params]
    mode = rng.choice(["codes", "width", "relu"]) if param_layers else "relu"
    if mode == "relu":
        ir = variant.ir
        pos = int(rng.integers(0, len(ir.layers) + 1))
        shape = ir.input_shape if pos == 0 else ir.layers[pos - 1].output_shape
        relu = LayerNode("Relu", f"relu_extra{pos}", {}, shape, shape)
        ir.layers.insert(pos, relu)
        variant.act_formats.insert(pos + 1, variant.act_formats[pos])
    else:
        layer = str(rng.choice(param_layers))
        tensors = variant.params[layer]
        key = str(rng.choice(sorted(tensors)))
        t = tensors[key]
        if mode == "codes":
            codes = rng.integers(t.format.min_code, t.format.max_code + 1, size=t.codes.shape)
            tensors[key] = QuantizedTensor(codes, t.format)
        else:
            bits = int(rng.choice([b for b in ALLOWED_BITS if b != t.format.total_bits]))
            tensors[key] = quantize_tensor(t.dequantize(), bits)
        variant.config = dataclasses.replace(variant.config)
    return finalize(variant)
