"""Batched float32 forward pass over a :class:`ModelIR`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layer_ir import LayerNode, ModelIR


def _conv(x: np.ndarray, layer: LayerNode) -> np.ndarray:
    hp = layer.hyperparams
    k, s, p = hp["kernel"], hp["stride"], hp["pad"]
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    # win: (N, C, Ho, Wo, k, k)
    out = np.einsum("nchwij,ocij->nohw", win, layer.weights, optimize=True)
    return (out + layer.bias[None, :, None, None]).astype(np.float32)


def _maxpool(x: np.ndarray, layer: LayerNode) -> np.ndarray:
    w, s = layer.hyperparams["window"], layer.hyperparams["stride"]
    win = sliding_window_view(x, (w, w), axis=(2, 3))[:, :, ::s, ::s]
    return win.max(axis=(4, 5))


def apply_layer(x: np.ndarray, layer: LayerNode) -> np.ndarray:
    kind = layer.kind
    if kind == "Conv":
        return _conv(x, layer)
    if kind == "MaxPool":
        return _maxpool(x, layer)
    if kind == "ScaleShift":
        tail = (1,) * (x.ndim - 2)
        a = layer.scale.astype(np.float32).reshape(1, -1, *tail)
        b = layer.bias.astype(np.float32).reshape(1, -1, *tail)
        return (x * a + b).astype(np.float32)
    if kind == "Relu":
        return np.maximum(x, np.float32(0))
    if kind == "Flatten":
        return x.reshape(len(x), -1)
    if kind == "FullyConnected":
        return (x @ layer.weights.T + layer.bias).astype(np.float32)
    raise ValueError(f"unknown layer kind {kind}")


def forward(ir: ModelIR, images: np.ndarray, collect: bool = False):
    """Run ``images`` (N, *input_shape) through the chain.

    With ``collect`` the activations of every edge (input first) are returned
    as a list instead of only the final output.
    """
    x = np.asarray(images, dtype=np.float32).reshape((-1, *ir.input_shape))
    edges = [x] if collect else None
    for layer in ir.layers:
        x = apply_layer(x, layer)
        if collect:
            edges.append(x)
    return edges if collect else x


def edge_max_abs(ir: ModelIR, images: np.ndarray, batch: int = 256) -> list[float]:
    """Largest magnitude seen on every edge over ``images``."""
    result = [0.0] * (len(ir.layers) + 1)
    for start in range(0, len(images), batch):
        edges = forward(ir, images[start:start + batch], collect=True)
        for i, e in enumerate(edges):
            result[i] = max(result[i], float(np.abs(e).max()) if e.size else 0.0)
    return result
