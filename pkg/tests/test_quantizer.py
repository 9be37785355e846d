from fractions import Fraction

import numpy as np
import pytest

from onnxflow import quantizer as q
from onnxflow.errors import EmptyTensor, NonFiniteValue
from onnxflow.layer_ir import LayerNode, ModelIR, infer_shapes
from onnxflow.quantizer import FixedPointFormat


def _half_even(x: Fraction) -> int:
    return round(x)  # Fraction.__round__ rounds ties to even


def test_quantize_value_examples():
    assert q.quantize_value(0.5, FixedPointFormat(8, 6)) == 32
    assert q.dequantize(32, FixedPointFormat(8, 6)) == 0.5
    fmt = FixedPointFormat(4, 2)
    assert q.quantize_value(1.9, fmt) == 7
    assert q.dequantize(7, fmt) == 1.75
    for total in q.ALLOWED_BITS:
        for frac in range(total):
            assert q.quantize_value(0.0, FixedPointFormat(total, frac)) == 0


def test_quantize_value_ties_to_even():
    fmt = FixedPointFormat(8, 0)
    assert [q.quantize_value(v, fmt) for v in (0.5, 1.5, 2.5, -0.5, -1.5)] == [0, 2, 2, 0, -2]


def test_quantize_value_nan_rejected():
    with pytest.raises(NonFiniteValue):
        q.quantize_value(float("nan"), FixedPointFormat(8, 4))


def test_format_range():
    fmt = FixedPointFormat(8, 5)
    assert (fmt.min_code, fmt.max_code) == (-128, 127)
    assert fmt.min_value == -4.0 and fmt.max_value == 4 - 1 / 32
    assert fmt.step == 1 / 32
    with pytest.raises(ValueError):
        FixedPointFormat(8, 8)
    with pytest.raises(ValueError):
        FixedPointFormat(1, 0)


def test_calibrate_below_one():
    fmt = q.calibrate_format(np.linspace(-0.9, 0.9, 11), 8)
    assert (fmt.int_bits, fmt.frac_bits) == (0, 7)
    assert fmt.max_value == 0.9921875


def test_calibrate_max_abs_3_2():
    fmt = q.calibrate_format([0.1, -3.2, 1.0], 8)
    assert (fmt.int_bits, fmt.frac_bits) == (2, 5)
    assert fmt.max_value >= 3.2


def test_calibrate_rounding_guard():
    # 0.999 rounds up to 1.0 at 7 fraction bits, which would saturate
    fmt = q.calibrate_format([0.999], 8)
    assert fmt.frac_bits == 6
    assert q.quantize_value(0.999, fmt) * fmt.step == 1.0


def test_calibrate_errors():
    with pytest.raises(EmptyTensor):
        q.calibrate_format([], 8)
    with pytest.raises(NonFiniteValue):
        q.calibrate_format([1.0, np.inf], 8)


def test_gaussian_half_ulp_bound():
    x = np.random.default_rng(0).normal(size=10_000)
    fmt = q.calibrate_format(x, 16)
    err = np.abs(q.dequantize(q.quantize_array(x, fmt), fmt) - x)
    assert err.max() <= 2.0 ** (-fmt.frac_bits - 1)


def test_quantize_array_matches_exact_rounding():
    rng = np.random.default_rng(1)
    for _ in range(300):
        total = int(rng.choice(q.ALLOWED_BITS))
        fmt = FixedPointFormat(total, int(rng.integers(0, total)))
        x = float(rng.normal(scale=2.0 ** fmt.int_bits))
        want = _half_even(Fraction(x) * 2 ** fmt.frac_bits)
        want = min(max(want, fmt.min_code), fmt.max_code)
        assert q.quantize_value(x, fmt) == want


def test_saturation():
    fmt = FixedPointFormat(4, 2)
    assert q.quantize_value(100.0, fmt) == fmt.max_code
    assert q.quantize_value(-100.0, fmt) == fmt.min_code


def test_monotonic():
    fmt = FixedPointFormat(8, 4)
    xs = np.sort(np.random.default_rng(2).uniform(-10, 10, 2000))
    assert np.all(np.diff(q.quantize_array(xs, fmt)) >= 0)


def test_quantize_tensor_example():
    t = q.quantize_tensor([0.3, -0.02, 0.01, 0.7], 4)
    assert (t.format.int_bits, t.format.frac_bits) == (0, 3)
    assert t.codes.tolist() == [2, 0, 0, 6]


def _fc_model(weights):
    w = np.asarray(weights, dtype=np.float32).reshape(1, -1)
    fc = LayerNode("FullyConnected", "fc0", {"in_features": w.shape[1], "out_features": 1},
                   weights=w, bias=np.zeros(1, np.float32))
    return infer_shapes(ModelIR([fc], (w.shape[1],), source_name="fc"))


def test_zero_fraction_of_example_weights():
    ir = _fc_model([0.3, -0.02, 0.01, 0.7])
    m = q.quantize_model(ir, q.parse_datatype("D8-W4"), np.ones((1, 4), np.float32))
    assert m.params["fc0"]["weights"].codes.reshape(-1).tolist() == [2, 0, 0, 6]
    assert m.zero_weight_fraction == 0.5


def test_zero_fraction_all_zero_and_passthrough():
    ir = _fc_model([0.0, 0.0])
    m = q.quantize_model(ir, q.parse_datatype("D8-W8"), np.ones((1, 2), np.float32))
    assert m.zero_weight_fraction == 1.0
    relu = infer_shapes(ModelIR([LayerNode("Relu", "relu0")], (3,)))
    m = q.quantize_model(relu, q.parse_datatype("D8-W8"), np.ones((1, 3), np.float32))
    assert m.zero_weight_fraction == 0.0 and m.param_bits == 0


def test_d32_w32_has_no_zero_weights(fixture_ir, calib):
    m = q.quantize_model(fixture_ir, q.parse_datatype("D32-W32"), calib)
    assert m.zero_weight_fraction == 0.0


def test_fixture_sweep(fixture_ir, calib):
    models = [q.quantize_model(fixture_ir, q.parse_datatype(f"D16-W{w}"), calib)
              for w in (16, 8, 4, 2)]
    zeros = [m.zero_weight_fraction for m in models]
    assert zeros == sorted(zeros)
    # storage is linear in the weight width
    per_bit = models[0].param_bits / 16
    assert [m.param_bits for m in models] == [per_bit * w for w in (16, 8, 4, 2)]
    # codes and formats only depend on weights; every code is in range
    for m in models:
        for tensors in m.params.values():
            for t in tensors.values():
                assert t.format.total_bits == m.config.weight_bits
                assert t.codes.min() >= t.format.min_code and t.codes.max() <= t.format.max_code


def test_zero_set_nesting():
    w = np.random.default_rng(3).normal(scale=0.2, size=5000)
    prev = None
    for bits in (32, 16, 8, 4, 2):
        zero = q.quantize_tensor(w, bits).codes == 0
        if prev is not None:
            assert np.all(zero[prev])
        prev = zero


def test_activation_formats_follow_producer(fixture_ir, calib):
    m = q.quantize_model(fixture_ir, q.parse_datatype("D16-W8"), calib)
    assert len(m.act_formats) == len(fixture_ir.layers) + 1
    for i, layer in enumerate(fixture_ir.layers):
        assert m.act_formats[i + 1].total_bits == 16
        if layer.kind in ("MaxPool", "Relu", "Flatten"):
            assert m.act_formats[i + 1] == m.act_formats[i]


def test_model_json_round_trip(fixture_ir, calib):
    m = q.quantize_model(fixture_ir, q.parse_datatype("D8-W4"), calib[:16], name="x")
    back = q.QuantizedModel.from_json(m.to_json())
    assert back == m and back.name == "x"


@pytest.mark.parametrize("text", ["D7-X2", "D16W8", "D3-W8", "D16-W64", ""])
def test_bad_datatypes(text):
    with pytest.raises(q.DatatypeError):
        q.parse_datatype(text)


def test_parse_datatype():
    cfg = q.parse_datatype("D16-W8")
    assert (cfg.act_bits, cfg.weight_bits, cfg.label) == (16, 8, "D16-W8")
