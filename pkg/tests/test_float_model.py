import numpy as np

from onnxflow import float_model, randnet
from onnxflow.layer_ir import LayerNode, ModelIR, infer_shapes


def _naive_conv(x, w, b, s, p):
    x = np.pad(x, ((0, 0), (p, p), (p, p)))
    co, _, k, _ = w.shape
    ho, wo = (x.shape[1] - k) // s + 1, (x.shape[2] - k) // s + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for y in range(ho):
            for z in range(wo):
                out[o, y, z] = np.sum(x[:, y * s:y * s + k, z * s:z * s + k] * w[o]) + b[o]
    return out


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(0)
    for k, s, p in [(1, 1, 0), (3, 1, 1), (3, 2, 0), (5, 2, 2)]:
        layer = LayerNode("Conv", "conv0", {"kernel": k, "stride": s, "pad": p, "out_channels": 3},
                          weights=rng.normal(size=(3, 2, k, k)).astype(np.float32),
                          bias=rng.normal(size=3).astype(np.float32))
        ir = infer_shapes(ModelIR([layer], (2, 9, 9)))
        x = rng.normal(size=(2, 9, 9)).astype(np.float32)
        got = float_model.forward(ir, x[None])[0]
        assert np.allclose(got, _naive_conv(x, layer.weights, layer.bias, s, p), atol=1e-4)


def test_maxpool_and_flatten_order():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    ir = infer_shapes(ModelIR([LayerNode("MaxPool", "pool0", {"window": 2, "stride": 2}),
                               LayerNode("Flatten", "flatten0")], (1, 4, 4)))
    assert float_model.forward(ir, x)[0].tolist() == [5, 7, 13, 15]


def test_collect_and_edge_ranges():
    rng = np.random.default_rng(1)
    ir = randnet.random_ir(rng)
    images = rng.uniform(-1, 1, size=(10, *ir.input_shape)).astype(np.float32)
    edges = float_model.forward(ir, images, collect=True)
    assert len(edges) == len(ir.layers) + 1
    ranges = float_model.edge_max_abs(ir, images, batch=3)
    assert ranges == [float(np.abs(e).max()) for e in edges]
