"""Direct layer-by-layer inference, the oracle for the streaming simulator.

Quantized mode is written independently of the actor arithmetic: plain
Python integers in nested loops, rounding through :class:`fractions.Fraction`
(``round`` on a Fraction rounds half to even).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .. import float_model
from ..layer_ir import ModelIR
from ..quantizer import FixedPointFormat, QuantizedModel


def _to_format(value: Fraction, fmt: FixedPointFormat) -> int:
    code = round(value * (1 << fmt.frac_bits))
    return max(fmt.min_code, min(fmt.max_code, code))


def _real(code: int, frac: int) -> Fraction:
    return Fraction(int(code), 1 << frac)


def _conv(x, layer, p, in_fmt, out_fmt):
    hp = layer.hyperparams
    k, s, pad = hp["kernel"], hp["stride"], hp["pad"]
    c, h, w = layer.input_shape
    co, ho, wo = layer.output_shape
    wt, bt = p["weights"], p["bias"]
    W = wt.codes.tolist()
    B = bt.codes.tolist()
    xf = in_fmt.frac_bits + wt.format.frac_bits
    out = np.zeros((co, ho, wo), dtype=np.int64)
    for o in range(co):
        bias = _real(B[o], bt.format.frac_bits)
        for y in range(ho):
            for xx in range(wo):
                acc = 0
                for ci in range(c):
                    for ky in range(k):
                        iy = y * s + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(k):
                            ix = xx * s + kx - pad
                            if 0 <= ix < w:
                                acc += W[o][ci][ky][kx] * x[ci][iy][ix]
                out[o, y, xx] = _to_format(_real(acc, xf) + bias, out_fmt)
    return out.tolist()


def _maxpool(x, layer):
    win, s = layer.hyperparams["window"], layer.hyperparams["stride"]
    c, ho, wo = layer.output_shape
    return [[[max(x[ci][y * s + i][xx * s + j] for i in range(win) for j in range(win))
              for xx in range(wo)] for y in range(ho)] for ci in range(c)]


def _scale_shift(x, p, in_fmt, out_fmt, flat):
    a, b = p["scale"], p["bias"]
    A = a.codes.tolist()
    Bc = b.codes.tolist()
    pf = in_fmt.frac_bits + a.format.frac_bits

    def one(v, ch):
        return _to_format(_real(A[ch] * v, pf) + _real(Bc[ch], b.format.frac_bits), out_fmt)

    if flat:
        return [one(v, i) for i, v in enumerate(x)]
    return [[[one(v, ci) for v in row] for row in plane] for ci, plane in enumerate(x)]


def _fc(x, p, in_fmt, out_fmt):
    wt, bt = p["weights"], p["bias"]
    xf = in_fmt.frac_bits + wt.format.frac_bits
    out = []
    for row, bias in zip(wt.codes.tolist(), bt.codes.tolist()):
        acc = sum(wv * xv for wv, xv in zip(row, x))
        out.append(_to_format(_real(acc, xf) + _real(bias, bt.format.frac_bits), out_fmt))
    return out


def _flatten(x):
    if isinstance(x[0], list):
        return [v for plane in x for row in plane for v in row]
    return list(x)


def _relu(x):
    if isinstance(x, list):
        return [_relu(v) for v in x]
    return max(x, 0)


def quantized_inference(model: QuantizedModel, image_codes) -> np.ndarray:
    """Output codes of ``model`` for input codes ``image_codes``."""
    ir = model.ir
    x = np.asarray(image_codes, dtype=np.int64).reshape(ir.input_shape).tolist()
    for i, layer in enumerate(ir.layers):
        in_fmt, out_fmt = model.act_formats[i], model.act_formats[i + 1]
        p = model.params.get(layer.name, {})
        kind = layer.kind
        if kind == "Conv":
            x = _conv(x, layer, p, in_fmt, out_fmt)
        elif kind == "MaxPool":
            x = _maxpool(x, layer)
        elif kind == "ScaleShift":
            x = _scale_shift(x, p, in_fmt, out_fmt, len(layer.input_shape) == 1)
        elif kind == "Relu":
            x = _relu(x)
        elif kind == "Flatten":
            x = _flatten(x)
        elif kind == "FullyConnected":
            x = _fc(x, p, in_fmt, out_fmt)
        else:
            raise ValueError(f"unknown layer kind {kind}")
    return np.asarray(x, dtype=np.int64).reshape(ir.output_shape)


def reference_inference(model, image) -> np.ndarray:
    """Class scores of ``image``.

    ``model`` may be a QuantizedModel (``image`` = input codes, returns output
    codes) or a float ModelIR (``image`` = float pixels, returns float32).
    """
    if isinstance(model, QuantizedModel):
        return quantized_inference(model, image)
    if isinstance(model, ModelIR):
        out = float_model.forward(model, np.asarray(image, dtype=np.float32)[None])
        return out[0]
    raise TypeError(f"expected QuantizedModel or ModelIR, got {type(model).__name__}")
