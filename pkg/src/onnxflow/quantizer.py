"""Dx-Wy post-training fixed-point quantization.

Every tensor gets its own signed two's-complement format. The integer/fraction
split comes from the tensor's largest magnitude; the total width comes from
the datatype (``x`` bits for activations, ``y`` bits for parameters).
Rounding is round-half-to-even, overflow saturates.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import float_model
from .errors import EmptyTensor, FlowError, NonFiniteValue
from .layer_ir import ModelIR, ir_from_json, ir_to_json

ALLOWED_BITS = (2, 4, 8, 16, 32)
DATATYPE_RE = re.compile(r"D(\d+)-W(\d+)")
# edges whose format is inherited from the producer: these layers only move,
# compare or clip codes
_CODE_PRESERVING = ("MaxPool", "Relu", "Flatten")


class DatatypeError(FlowError):
    code = "E_DATATYPE"


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError(f"total_bits {self.total_bits} outside [2, 32]")
        if not 0 <= self.frac_bits <= self.total_bits - 1:
            raise ValueError(f"frac_bits {self.frac_bits} outside [0, {self.total_bits - 1}]")

    @property
    def signed(self) -> bool:
        return True

    @property
    def int_bits(self) -> int:
        return self.total_bits - 1 - self.frac_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.min_code * self.step

    @property
    def max_value(self) -> float:
        return self.max_code * self.step

    def label(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"

    def to_dict(self) -> dict:
        return {"total_bits": self.total_bits, "frac_bits": self.frac_bits}

    @classmethod
    def from_dict(cls, d: dict) -> "FixedPointFormat":
        return cls(int(d["total_bits"]), int(d["frac_bits"]))


@dataclass(eq=False)
class QuantizedTensor:
    codes: np.ndarray
    format: FixedPointFormat

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.size and (
            self.codes.min() < self.format.min_code or self.codes.max() > self.format.max_code
        ):
            raise ValueError(f"codes outside the range of {self.format}")

    @property
    def shape(self) -> tuple:
        return self.codes.shape

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.format.step

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.format == other.format
            and self.codes.shape == other.codes.shape
            and np.array_equal(self.codes, other.codes)
        )

    def to_dict(self) -> dict:
        return {"format": self.format.to_dict(), "shape": list(self.codes.shape),
                "codes": self.codes.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedTensor":
        codes = np.asarray(d["codes"], dtype=np.int64).reshape(d["shape"])
        return cls(codes, FixedPointFormat.from_dict(d["format"]))


@dataclass(frozen=True)
class QuantConfig:
    act_bits: int
    weight_bits: int
    calibration_images: int = 256
    rounding: str = "half_even"
    saturation: str = "clamp"

    def __post_init__(self):
        for name in ("act_bits", "weight_bits"):
            if getattr(self, name) not in ALLOWED_BITS:
                raise DatatypeError(f"{name}={getattr(self, name)} not in {ALLOWED_BITS}")
        if self.calibration_images < 1:
            raise DatatypeError("calibration_images must be positive")

    @property
    def label(self) -> str:
        return f"D{self.act_bits}-W{self.weight_bits}"


def parse_datatype(text: str, calibration_images: int = 256) -> QuantConfig:
    """Parse the ``Dx-Wy`` naming scheme, e.g. ``D16-W8``."""
    m = DATATYPE_RE.fullmatch(text.strip())
    if not m:
        raise DatatypeError(f"malformed datatype {text!r} (expected Dx-Wy, e.g. D16-W8)")
    try:
        return QuantConfig(int(m.group(1)), int(m.group(2)), calibration_images)
    except DatatypeError as exc:
        raise DatatypeError(f"datatype {text.strip()}: {exc}") from None


# ---------------------------------------------------------------------------
# scalar / tensor quantization

def quantize_array(values, fmt: FixedPointFormat) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if np.isnan(x).any():
        raise NonFiniteValue("NaN cannot be quantized")
    scaled = np.rint(np.ldexp(x, fmt.frac_bits))  # rint rounds half to even
    return np.clip(scaled, fmt.min_code, fmt.max_code).astype(np.int64)


def quantize_value(x: float, fmt: FixedPointFormat) -> int:
    return int(quantize_array(np.float64(x), fmt))


def dequantize(codes, fmt: FixedPointFormat) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * fmt.step


def format_for_max_abs(max_abs: float, total_bits: int) -> FixedPointFormat:
    """Widest fraction that still holds ``max_abs`` once rounded, if any does."""
    int_bits = max(0, math.ceil(math.log2(max_abs))) if max_abs > 0 else 0
    while True:
        frac = min(max(total_bits - 1 - int_bits, 0), total_bits - 1)
        fmt = FixedPointFormat(total_bits, frac)
        if frac == 0 or np.rint(math.ldexp(max_abs, frac)) <= fmt.max_code:
            return fmt
        int_bits += 1


def calibrate_format(values, total_bits: int) -> FixedPointFormat:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyTensor("cannot calibrate an empty tensor")
    if not np.isfinite(arr).all():
        raise NonFiniteValue("calibration values must be finite")
    if total_bits < 2:
        raise ValueError("total_bits must be at least 2")
    return format_for_max_abs(float(np.abs(arr).max()), total_bits)


def quantize_tensor(values, total_bits: int) -> QuantizedTensor:
    fmt = calibrate_format(values, total_bits)
    return QuantizedTensor(quantize_array(values, fmt), fmt)


# ---------------------------------------------------------------------------
# whole-model quantization

@dataclass(eq=False)
class QuantizedModel:
    ir: ModelIR
    config: QuantConfig
    # layer name -> {"weights" | "bias" | "scale": QuantizedTensor}
    params: dict[str, dict[str, QuantizedTensor]]
    # act_formats[0] is the model input, act_formats[i + 1] the output of layer i
    act_formats: list[FixedPointFormat]
    zero_weight_fraction: float = 0.0
    param_bits: int = 0
    name: str = field(default="")

    @property
    def input_format(self) -> FixedPointFormat:
        return self.act_formats[0]

    @property
    def output_format(self) -> FixedPointFormat:
        return self.act_formats[-1]

    def quantize_input(self, image) -> np.ndarray:
        """Float image (any shape matching the model input) -> input codes."""
        return quantize_array(np.asarray(image, dtype=np.float32), self.input_format).reshape(
            self.ir.input_shape
        )

    def __eq__(self, other):
        if not isinstance(other, QuantizedModel):
            return NotImplemented
        return (
            self.ir == other.ir
            and self.config == other.config
            and self.act_formats == other.act_formats
            and self.params.keys() == other.params.keys()
            and all(self.params[k] == other.params[k] for k in self.params)
            and self.zero_weight_fraction == other.zero_weight_fraction
            and self.param_bits == other.param_bits
        )

    def to_json(self) -> str:
        doc = {
            "datatype": self.config.label,
            "calibration_images": self.config.calibration_images,
            "name": self.name,
            "zero_weight_fraction": self.zero_weight_fraction,
            "param_bits": self.param_bits,
            "act_formats": [f.to_dict() for f in self.act_formats],
            "params": {
                layer: {k: t.to_dict() for k, t in tensors.items()}
                for layer, tensors in self.params.items()
            },
            "ir": json.loads(ir_to_json(self.ir)),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "QuantizedModel":
        doc = json.loads(text)
        cfg = parse_datatype(doc["datatype"], doc["calibration_images"])
        return cls(
            ir_from_json(json.dumps(doc["ir"])),
            cfg,
            {layer: {k: QuantizedTensor.from_dict(t) for k, t in tensors.items()}
             for layer, tensors in doc["params"].items()},
            [FixedPointFormat.from_dict(f) for f in doc["act_formats"]],
            doc["zero_weight_fraction"],
            doc["param_bits"],
            doc.get("name", ""),
        )


def zero_weight_fraction(model: QuantizedModel) -> float:
    """Share of Conv/FC weight codes equal to zero (biases and scales excluded)."""
    zeros = total = 0
    for tensors in model.params.values():
        w = tensors.get("weights")
        if w is not None:
            zeros += int(np.count_nonzero(w.codes == 0))
            total += w.codes.size
    return zeros / total if total else 0.0


def parameter_bits(model: QuantizedModel) -> int:
    return sum(
        t.codes.size * t.format.total_bits
        for tensors in model.params.values()
        for t in tensors.values()
    )


def _layer_params(layer, weight_bits: int) -> dict[str, QuantizedTensor]:
    out = {}
    if layer.kind in ("Conv", "FullyConnected"):
        out["weights"] = quantize_tensor(layer.weights, weight_bits)
        out["bias"] = quantize_tensor(layer.bias, weight_bits)
    elif layer.kind == "ScaleShift":
        out["scale"] = quantize_tensor(layer.scale, weight_bits)
        out["bias"] = quantize_tensor(layer.bias, weight_bits)
    return out


def activation_formats(ir: ModelIR, act_bits: int, calib) -> list[FixedPointFormat]:
    ranges = float_model.edge_max_abs(ir, np.asarray(calib, dtype=np.float32))
    formats = [format_for_max_abs(ranges[0], act_bits)]
    for i, layer in enumerate(ir.layers):
        if layer.kind in _CODE_PRESERVING:
            formats.append(formats[-1])
        else:
            formats.append(format_for_max_abs(ranges[i + 1], act_bits))
    return formats


def finalize(model: QuantizedModel) -> QuantizedModel:
    model.zero_weight_fraction = zero_weight_fraction(model)
    model.param_bits = parameter_bits(model)
    return model


def quantize_model(ir: ModelIR, cfg: QuantConfig, calib, name: str = "") -> QuantizedModel:
    """Post-training quantization of ``ir`` with calibration images ``calib``."""
    calib = np.asarray(calib, dtype=np.float32)
    if calib.size == 0:
        raise EmptyTensor("calibration batch is empty")
    calib = calib.reshape((-1, *ir.input_shape))[: cfg.calibration_images]
    params = {layer.name: _layer_params(layer, cfg.weight_bits) for layer in ir.layers}
    params = {k: v for k, v in params.items() if v}
    formats = activation_formats(ir, cfg.act_bits, calib)
    return finalize(QuantizedModel(ir, cfg, params, formats, name=name or ir.source_name))
