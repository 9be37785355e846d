"""Dataflow graph container and the QuantizedModel -> graph lowering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..quantizer import QuantizedModel, QuantizedTensor
from . import actors as A

DEFAULT_FIFO_CAPACITY = 64


@dataclass(frozen=True)
class Structure:
    """Topology without stored parameter codes; what the XDF file carries."""

    name: str
    actors: tuple  # ((name, kind, ((param, value), ...)), ...)
    connections: tuple  # ((src, src_port, dst, dst_port, capacity), ...)


class DataflowGraph:
    def __init__(self, name: str = "network"):
        self.name = name
        self.actors: dict[str, A.Actor] = {}
        self.channels: list[A.FifoChannel] = []
        self.source: str | None = None
        self.sink: str | None = None

    def add(self, actor: A.Actor) -> A.Actor:
        if actor.name in self.actors:
            raise ValueError(f"duplicate actor name {actor.name!r}")
        self.actors[actor.name] = actor
        if isinstance(actor, A.Source):
            self.source = actor.name
        elif isinstance(actor, A.Sink):
            self.sink = actor.name
        return actor

    def connect(self, src: str, src_port: str, dst: str, dst_port: str,
                capacity: int = DEFAULT_FIFO_CAPACITY, fmt=None) -> A.FifoChannel:
        if src == dst:
            raise ValueError(f"self-loop on actor {src!r}")
        s, d = self.actors[src], self.actors[dst]
        if src_port not in s.out_ports:
            raise ValueError(f"{src!r} has no output port {src_port!r}")
        if dst_port not in d.in_ports:
            raise ValueError(f"{dst!r} has no input port {dst_port!r}")
        if src_port in s.outputs or dst_port in d.inputs:
            raise ValueError(f"port already connected: {src}.{src_port} -> {dst}.{dst_port}")
        ch = A.FifoChannel(src, src_port, dst, dst_port, capacity, fmt)
        s.outputs[src_port] = ch
        d.inputs[dst_port] = ch
        self.channels.append(ch)
        return ch

    def validate(self) -> "DataflowGraph":
        """Every port connected once, graph connected, one source and one sink."""
        if self.source is None or self.sink is None:
            raise ValueError("graph needs a Source and a Sink")
        for actor in self.actors.values():
            actor.bind()
        adj: dict[str, set] = {n: set() for n in self.actors}
        for ch in self.channels:
            adj[ch.src].add(ch.dst)
            adj[ch.dst].add(ch.src)
        seen, stack = {self.source}, [self.source]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != len(self.actors):
            raise ValueError(f"graph not connected: {sorted(set(self.actors) - seen)}")
        return self

    @property
    def input_layout(self) -> tuple:
        return self.actors[self.source].layout

    @property
    def output_layout(self) -> tuple:
        return self.actors[self.sink].layout

    def main_chain(self) -> list[str]:
        """Actor names along the data path from Source to Sink."""
        chain = [self.source]
        while chain[-1] != self.sink:
            actor = self.actors[chain[-1]]
            port = "out" if "out" in actor.outputs else sorted(actor.outputs)[0]
            chain.append(actor.outputs[port].dst)
            if len(chain) > len(self.actors):
                raise ValueError("data path does not reach the sink")
        return chain

    def structure(self) -> Structure:
        actors = tuple(sorted(
            (a.name, a.kind, tuple(sorted(a.params().items()))) for a in self.actors.values()
        ))
        conns = tuple(sorted(
            (c.src, c.src_port, c.dst, c.dst_port, c.capacity) for c in self.channels
        ))
        return Structure(self.name, actors, conns)

    def ledger(self) -> dict[str, tuple[int, int, int]]:
        """(produced, consumed, occupancy) per channel."""
        return {c.name: c.ledger() for c in self.channels}


def conv_weight_tokens(weights: QuantizedTensor) -> QuantizedTensor:
    """(O, C, k, k) kernel codes reordered to the (ky, kx, channel) window order."""
    codes = weights.codes
    o = codes.shape[0]
    return QuantizedTensor(codes.transpose(0, 2, 3, 1).reshape(o, -1), weights.format)


def build_dataflow(model: QuantizedModel, fifo_capacity: int = DEFAULT_FIFO_CAPACITY,
                   name: str | None = None) -> DataflowGraph:
    """Lower a quantized chain to actors: Conv layers follow the line-buffer template."""
    ir = model.ir
    g = DataflowGraph(name or model.name or ir.source_name or "network")
    layout = A.layout_for_shape(ir.input_shape)
    prev = g.add(A.Source("source", layout)).name
    fmt = model.act_formats[0]

    def link(src, dst, f, src_port="out", dst_port="in"):
        g.connect(src, src_port, dst, dst_port, fifo_capacity, f)

    for i, layer in enumerate(ir.layers):
        out_fmt = model.act_formats[i + 1]
        p = model.params.get(layer.name, {})
        kind = layer.kind
        if kind == "Conv":
            hp = layer.hyperparams
            c, h, w = layer.input_shape
            lb = g.add(A.LineBuffer(f"lb_{layer.name}", c, h, w, hp["kernel"], hp["stride"], hp["pad"]))
            wt = conv_weight_tokens(p["weights"])
            ws = g.add(A.WeightStore(f"wstore_{layer.name}", wt))
            bs = g.add(A.BiasStore(f"bstore_{layer.name}", p["bias"]))
            conv = g.add(A.Conv(layer.name, wt.codes.shape[1], hp["out_channels"], fmt, out_fmt))
            link(prev, lb.name, fmt)
            link(lb.name, conv.name, fmt)
            link(ws.name, conv.name, wt.format, dst_port="weights")
            link(bs.name, conv.name, p["bias"].format, dst_port="bias")
            prev = conv.name
            layout = A.layout_for_shape(layer.output_shape)
        else:
            if kind == "MaxPool":
                c, h, w = layer.input_shape
                hp = layer.hyperparams
                actor = A.MaxPool(layer.name, c, h, w, hp["window"], hp["stride"])
                layout = A.layout_for_shape(layer.output_shape)
            elif kind == "ScaleShift":
                if len(p["scale"].codes) != layout[1] or layout[0] == "flat_pixels":
                    raise ValueError(f"{layer.name}: per-channel scale does not match the token width")
                actor = A.ScaleShift(layer.name, p["scale"], p["bias"], fmt, out_fmt)
            elif kind == "Relu":
                actor = A.Relu(layer.name, layout[1])
            elif kind == "Flatten":
                if layout[0] == "vector":
                    actor = A.Flatten(layer.name, layout[1], 1, 1)
                else:
                    actor = A.Flatten(layer.name, *layout[1:])
                    layout = ("flat_pixels",) + layout[1:]
            elif kind == "FullyConnected":
                actor = A.FullyConnected(layer.name, p["weights"], p["bias"], layout, fmt, out_fmt)
                layout = ("vector", layer.hyperparams["out_features"])
            else:
                raise ValueError(f"unsupported layer kind {kind}")
            g.add(actor)
            link(prev, actor.name, fmt)
            prev = actor.name
        fmt = out_fmt
    g.add(A.Sink("sink", layout))
    link(prev, "sink", fmt)
    return g.validate()


def model_output_codes(graph: DataflowGraph, tokens: list[np.ndarray]) -> np.ndarray:
    return A.from_tokens(tokens, graph.output_layout)
