import numpy as np
import pytest

from onnxflow import float_model
from onnxflow.layer_ir import LayerNode, ModelIR, infer_shapes
from onnxflow.quantizer import parse_datatype, quantize_model
from onnxflow.stream_sim import build_dataflow, reference_inference, run_stream


def _identity_conv():
    layer = LayerNode("Conv", "conv0", {"kernel": 1, "stride": 1, "pad": 0, "out_channels": 1},
                      weights=np.ones((1, 1, 1, 1), np.float32), bias=np.zeros(1, np.float32))
    return infer_shapes(ModelIR([layer], (1, 5, 5), source_name="id"))


def test_identity_conv_float():
    ir = _identity_conv()
    x = np.random.default_rng(0).uniform(-1, 1, size=(1, 5, 5)).astype(np.float32)
    assert np.array_equal(reference_inference(ir, x), x)


def test_identity_conv_quantized():
    ir = _identity_conv()
    model = quantize_model(ir, parse_datatype("D8-W8"), np.full((1, 1, 5, 5), 0.9, np.float32))
    codes = np.random.default_rng(1).integers(-128, 128, size=(1, 5, 5))
    assert np.array_equal(reference_inference(model, codes), codes)


def test_float_reference_matches_batched_forward(fixture_ir, mnist_test):
    imgs = mnist_test.normalized(np.arange(5))
    batched = float_model.forward(fixture_ir, imgs)
    for img, row in zip(imgs, batched):
        assert np.allclose(reference_inference(fixture_ir, img), row, atol=1e-5)


def test_fixture_float_accuracy(fixture_ir, mnist_test):
    idx = np.arange(1000)
    preds = float_model.forward(fixture_ir, mnist_test.normalized(idx)).argmax(axis=1)
    assert np.mean(preds == mnist_test.labels[idx]) >= 0.95


def test_quantized_reference_matches_stream_on_random_images(fixture_ir, calib):
    model = quantize_model(fixture_ir, parse_datatype("D16-W8"), calib)
    rng = np.random.default_rng(2)
    imgs = [model.quantize_input(rng.uniform(0, 1, size=(1, 28, 28))) for _ in range(100)]
    outs, _ = run_stream(build_dataflow(model), imgs, check=True)
    for img, out in zip(imgs, outs):
        assert np.array_equal(reference_inference(model, img), out)


def test_reference_rejects_other_models():
    with pytest.raises(TypeError):
        reference_inference(object(), np.zeros(3))
