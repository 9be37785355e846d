"""HLS-flow artifact emission: per-actor C++ sources, synthesis script, XDF topology.

Every actor becomes one template-instantiated source file whose top function
has one ``hls::stream`` argument per port. Streams are element-serial: a token
of ``LANES`` values travels as ``LANES`` consecutive stream elements.
Parameter codes are embedded as ``static const ap_int<B> name[N]`` tables.

The topology file uses a small XDF subset::

    <XDF name="...">
      <Instance id="conv0"><Class name="Conv"/><Parameter name="fan_in" value="9"/></Instance>
      <Connection src="lb_conv0" src-port="out" dst="conv0" dst-port="in">
        <Attribute name="bufferSize" value="64"/>
      </Connection>
    </XDF>
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from xml.parsers import expat
from xml.sax.saxutils import quoteattr

import numpy as np

from .errors import IoFailure, SchemaViolation, UnrepresentableParameter
from .quantizer import QuantizedModel
from .stream_sim import actors as A
from .stream_sim.graph import DEFAULT_FIFO_CAPACITY, DataflowGraph, Structure

TOPOLOGY_FILE = "topology.xdf"
SCRIPT_FILE = "synth.tcl"
SOURCE_DIR = "src"
DESCRIPTOR_DIR = "descriptors"
_VALUES_PER_LINE = 16

_KIND_CLASSES = {
    cls.kind: cls
    for cls in (A.Source, A.Sink, A.LineBuffer, A.MaxPool, A.WeightStore, A.BiasStore, A.Conv,
                A.ScaleShift, A.Relu, A.Flatten, A.FullyConnected, A.Switch, A.Select)
}
KINDS = tuple(sorted(_KIND_CLASSES))


def ports_for(kind: str, params: dict) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(input ports, output ports) of an actor kind with the given parameters."""
    if kind == "Switch":
        return ("in",), tuple(f"out{i}" for i in range(int(params["branches"])))
    if kind == "Select":
        return tuple(f"in{i}" for i in range(int(params["branches"]))), ("out",)
    cls = _KIND_CLASSES[kind]
    return cls.in_ports, cls.out_ports


# ---------------------------------------------------------------------------
# bundle

@dataclass
class EmissionBundle:
    layer_sources: dict[str, str]  # "src/<actor>.cpp" -> text
    build_script: str
    topology_xdf: str
    actor_descriptors: dict[str, str] = field(default_factory=dict)  # kind -> text

    def files(self) -> dict[str, str]:
        out = dict(self.layer_sources)
        out[SCRIPT_FILE] = self.build_script
        out[TOPOLOGY_FILE] = self.topology_xdf
        for kind, text in self.actor_descriptors.items():
            out[f"{DESCRIPTOR_DIR}/{kind}.desc"] = text
        return dict(sorted(out.items()))

    def write(self, outdir) -> list[Path]:
        root = Path(outdir)
        written = []
        for rel, text in self.files().items():
            path = root / rel
            write_atomic(path, text)
            written.append(path)
        return written


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# per-channel stream types

def channel_lanes(graph: DataflowGraph) -> dict[str, int]:
    """Values per token on every channel."""
    lanes: dict[str, int] = {}

    def out_lanes(actor: A.Actor) -> int:
        p = actor.params()
        kind = actor.kind
        if kind == "Source":
            return p["length"] if p["layout"] == "vector" else p["channels"]
        if kind == "LineBuffer":
            return p["kernel"] ** 2 * p["channels"]
        if kind == "WeightStore":
            return int(np.prod(actor.tensor.codes.shape))
        if kind == "BiasStore":
            return actor.tensor.codes.size
        if kind == "Conv":
            return p["out_channels"]
        if kind == "FullyConnected":
            return p["out_features"]
        if kind in ("MaxPool", "ScaleShift", "Relu", "Flatten"):
            return p["channels"]
        # routing actors pass tokens through
        port = "in" if kind == "Switch" else sorted(actor.inputs)[0]
        return out_lanes(graph.actors[actor.inputs[port].src])

    for ch in graph.channels:
        lanes[ch.name] = out_lanes(graph.actors[ch.src])
    return lanes


def _bits(ch: A.FifoChannel) -> int:
    return ch.format.total_bits if ch.format is not None else 32


# ---------------------------------------------------------------------------
# templates

_HEADER = Template("""\
// $name: $kind actor (generated)
// $summary
#include <ap_int.h>
#include <hls_stream.h>

""")

_REQUANTIZE = Template("""\
static const int ACC_FRAC = $acc_frac, BIAS_FRAC = $bias_frac, OUT_FRAC = $out_frac;

// align bias and accumulator, round half to even onto the output grid, saturate
template <int AB, int BB>
static ap_int<$out_bits> requantize(ap_int<AB> acc, ap_int<BB> bias) {
    const int F = ACC_FRAC > BIAS_FRAC ? ACC_FRAC : BIAS_FRAC;
    ap_int<AB + 40> sum = (ap_int<AB + 40>(acc) << (F - ACC_FRAC))
                        + (ap_int<AB + 40>(bias) << (F - BIAS_FRAC));
    ap_int<AB + 40> q;
    if (F > OUT_FRAC) {
        const int r = F - OUT_FRAC;
        ap_int<AB + 40> fl = sum >> r;
        ap_int<AB + 40> rem = sum - (fl << r);
        ap_int<AB + 40> half = ap_int<AB + 40>(1) << (r - 1);
        q = fl + ((rem > half || (rem == half && fl[0])) ? 1 : 0);
    } else {
        q = sum << (OUT_FRAC - F);
    }
    const ap_int<AB + 40> lo = -(ap_int<AB + 40>(1) << ($out_bits - 1));
    const ap_int<AB + 40> hi = (ap_int<AB + 40>(1) << ($out_bits - 1)) - 1;
    return ap_int<$out_bits>(q < lo ? lo : (q > hi ? hi : q));
}

""")

_BODIES = {
    "Source": Template("""\
void $name($ports) {
#pragma HLS INTERFACE axis port=ext
#pragma HLS INTERFACE axis port=out
    // $tokens tokens of $lanes values per image
    for (int t = 0; t < $tokens; t++) {
        for (int l = 0; l < $lanes; l++) {
#pragma HLS PIPELINE II=1
            out.write(ext.read());
        }
    }
}
"""),
    "Sink": Template("""\
void $name($ports) {
#pragma HLS INTERFACE axis port=in
#pragma HLS INTERFACE axis port=ext
    for (int t = 0; t < $tokens; t++) {
        for (int l = 0; l < $lanes; l++) {
#pragma HLS PIPELINE II=1
            ext.write(in.read());
        }
    }
}
"""),
    "LineBuffer": Template("""\
static const int C = $channels, H = $height, W = $width;
static const int K = $kernel, S = $stride, P = $pad;

void $name($ports) {
    static ap_int<$in_bits> rows[K][W + 2 * P][C];
#pragma HLS ARRAY_PARTITION variable=rows complete dim=1
    for (int r = 0; r < H + 2 * P; r++) {
        for (int x = 0; x < W + 2 * P; x++) {
#pragma HLS PIPELINE II=1
            bool real = r >= P && r < H + P && x >= P && x < W + P;
            for (int c = 0; c < C; c++)
                rows[r % K][x][c] = real ? in.read() : ap_int<$in_bits>(0);
            int r0 = r - K + 1, x0 = x - K + 1;
            if (r0 >= 0 && x0 >= 0 && r0 % S == 0 && x0 % S == 0)
                for (int ky = 0; ky < K; ky++)
                    for (int kx = 0; kx < K; kx++)
                        for (int c = 0; c < C; c++)
                            out.write(rows[(r0 + ky) % K][x0 + kx][c]);
        }
    }
}
"""),
    "MaxPool": Template("""\
static const int C = $channels, H = $height, W = $width, K = $window, S = $stride;

void $name($ports) {
    static ap_int<$in_bits> rows[K][W][C];
    for (int r = 0; r < H; r++) {
        for (int x = 0; x < W; x++) {
#pragma HLS PIPELINE II=1
            for (int c = 0; c < C; c++)
                rows[r % K][x][c] = in.read();
            int r0 = r - K + 1, x0 = x - K + 1;
            if (r0 >= 0 && x0 >= 0 && r0 % S == 0 && x0 % S == 0)
                for (int c = 0; c < C; c++) {
                    ap_int<$in_bits> m = rows[r0 % K][x0][c];
                    for (int ky = 0; ky < K; ky++)
                        for (int kx = 0; kx < K; kx++)
                            if (rows[(r0 + ky) % K][x0 + kx][c] > m)
                                m = rows[(r0 + ky) % K][x0 + kx][c];
                    out.write(m);
                }
        }
    }
}
"""),
    "WeightStore": Template("""\
// format: $bits bits, $frac fractional
$tables
void $name($ports) {
    for (int i = 0; i < $count; i++) {
#pragma HLS PIPELINE II=1
        out.write(codes[i]);
    }
}
"""),
    "Conv": Template("""\
static const int FAN_IN = $fan_in, OUT_CH = $out_channels;

void $name($ports) {
    ap_int<$in_bits> x[FAN_IN];
    ap_int<$weight_bits> w[OUT_CH][FAN_IN];
    ap_int<$bias_bits> b[OUT_CH];
    for (int i = 0; i < FAN_IN; i++) x[i] = in.read();
    for (int o = 0; o < OUT_CH; o++)
        for (int i = 0; i < FAN_IN; i++) w[o][i] = weights.read();
    for (int o = 0; o < OUT_CH; o++) b[o] = bias.read();
    for (int o = 0; o < OUT_CH; o++) {
#pragma HLS PIPELINE II=1
        ap_int<$acc_bits> acc = 0;
        for (int i = 0; i < FAN_IN; i++) {
            if (w[o][i] != 0) acc += x[i] * w[o][i];  // zero weights skip the multiply
        }
        out.write(requantize(acc, b[o]));
    }
}
"""),
    "ScaleShift": Template("""\
// out = round(scale * in + shift), scale Q.$scale_frac, shift Q.$shift_frac
$tables
void $name($ports) {
    for (int c = 0; c < $channels; c++) {
#pragma HLS PIPELINE II=1
        ap_int<$acc_bits> acc = ap_int<$acc_bits>(scale[c]) * in.read();
        out.write(requantize(acc, shift[c]));
    }
}
"""),
    "Relu": Template("""\
void $name($ports) {
    for (int c = 0; c < $channels; c++) {
#pragma HLS PIPELINE II=1
        ap_int<$in_bits> v = in.read();
        out.write(v < 0 ? ap_int<$in_bits>(0) : v);
    }
}
"""),
    "Flatten": Template("""\
// reinterprets the ($channels, $height, $width) pixel stream as a flat vector
void $name($ports) {
    for (int c = 0; c < $channels; c++) {
#pragma HLS PIPELINE II=1
        out.write(in.read());
    }
}
"""),
    "FullyConnected": Template("""\
static const int IN_F = $in_features, OUT_F = $out_features, LANES = $lanes;
$tables
// flat (C, H, W) index of lane l of token t
static inline int column(int t, int l) { return l * $plane + t; }

void $name($ports) {
    static ap_int<$acc_bits> acc[OUT_F];
    for (int t = 0; t < IN_F / LANES; t++) {
        for (int l = 0; l < LANES; l++) {
            ap_int<$in_bits> x = in.read();
            for (int o = 0; o < OUT_F; o++) {
#pragma HLS PIPELINE II=1
                acc[o] += weights[o * IN_F + column(t, l)] * x;
            }
        }
    }
    for (int o = 0; o < OUT_F; o++) {
        out.write(requantize(acc[o], bias[o]));
        acc[o] = 0;
    }
}
"""),
    "Switch": Template("""\
void $name($ports, int route) {
    for (int l = 0; l < $lanes; l++) {
#pragma HLS PIPELINE II=1
        switch (route) {
$cases
        }
    }
}
"""),
    "Select": Template("""\
void $name($ports, int route) {
    for (int l = 0; l < $lanes; l++) {
#pragma HLS PIPELINE II=1
        switch (route) {
$cases
        }
    }
}
"""),
}
_BODIES["BiasStore"] = _BODIES["WeightStore"]

_DESCRIPTOR = Template("""\
actor $kind
parameters: $params
$ports
""")


def _table(name: str, codes: np.ndarray, bits: int, actor: str) -> str:
    flat = np.asarray(codes, dtype=np.int64).reshape(-1)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if flat.size and (flat.min() < lo or flat.max() > hi):
        raise UnrepresentableParameter(f"{actor}.{name}: codes outside ap_int<{bits}>")
    lines = []
    for i in range(0, flat.size, _VALUES_PER_LINE):
        lines.append("    " + ", ".join(str(int(v)) for v in flat[i:i + _VALUES_PER_LINE]) + ",")
    body = "\n".join(lines)
    return f"static const ap_int<{bits}> {name}[{flat.size}] = {{\n{body}\n}};\n"


def _port_decl(graph, actor: A.Actor, lanes: dict) -> str:
    decls = []
    ins, outs = ports_for(actor.kind, actor.params())
    if actor.kind == "Source":
        ch = actor.outputs["out"]
        decls.append(f"hls::stream<ap_int<{_bits(ch)}> > &ext")
    for port in ins:
        ch = actor.inputs[port]
        decls.append(f"hls::stream<ap_int<{_bits(ch)}> > &{port}")
    for port in outs:
        ch = actor.outputs[port]
        decls.append(f"hls::stream<ap_int<{_bits(ch)}> > &{port}")
    if actor.kind == "Sink":
        decls.append(f"hls::stream<ap_int<{_bits(actor.inputs['in'])}> > &ext")
    return ", ".join(decls)


def _frac(ch: A.FifoChannel) -> int:
    return ch.format.frac_bits if ch.format is not None else 0


def _acc_bits(in_bits: int, w_bits: int, fan_in: int) -> int:
    return in_bits + w_bits + max(1, int(np.ceil(np.log2(max(fan_in, 2))))) + 1


def _source_text(graph: DataflowGraph, actor: A.Actor, lanes: dict) -> str:
    p = actor.params()
    kind = actor.kind
    ports = _port_decl(graph, actor, lanes)
    subs = dict(p, name=actor.name, ports=ports)
    summary = ", ".join(f"{k}={v}" for k, v in sorted(p.items())) or "no parameters"
    helper = None
    if "in" in actor.inputs:
        subs["in_bits"] = _bits(actor.inputs["in"])
    if kind in ("Source", "Sink"):
        ch = actor.outputs["out"] if kind == "Source" else actor.inputs["in"]
        subs["lanes"] = lanes[ch.name]
        subs["tokens"] = A.tokens_per_image(actor.layout)
    elif kind in ("WeightStore", "BiasStore"):
        t = actor.tensor
        subs["tables"] = _table("codes", t.codes, t.format.total_bits, actor.name)
        subs["count"] = t.codes.size
    elif kind == "Conv":
        w, b = actor.inputs["weights"], actor.inputs["bias"]
        subs.update(weight_bits=_bits(w), bias_bits=_bits(b),
                    acc_bits=_acc_bits(subs["in_bits"], _bits(w), p["fan_in"]))
        helper = dict(acc_frac=p["in_frac"] + _frac(w), bias_frac=_frac(b))
    elif kind == "ScaleShift":
        subs["tables"] = (_table("scale", actor.scale.codes, p["scale_bits"], actor.name)
                          + _table("shift", actor.shift.codes, p["shift_bits"], actor.name))
        subs["acc_bits"] = _acc_bits(p["in_bits"], p["scale_bits"], 1)
        helper = dict(acc_frac=p["in_frac"] + p["scale_frac"], bias_frac=p["shift_frac"])
    elif kind == "FullyConnected":
        subs["tables"] = (_table("weights", actor.weights.codes, p["weight_bits"], actor.name)
                          + _table("bias", actor.bias.codes, p["bias_bits"], actor.name))
        subs["lanes"] = lanes[actor.inputs["in"].name]
        subs["acc_bits"] = _acc_bits(p["in_bits"], p["weight_bits"], p["in_features"])
        subs["plane"] = p["in_height"] * p["in_width"] if p["in_layout"] != "vector" else 1
        helper = dict(acc_frac=p["in_frac"] + p["weight_frac"], bias_frac=p["bias_frac"])
    elif kind == "Switch":
        subs["lanes"] = lanes[actor.inputs["in"].name]
        subs["cases"] = "\n".join(
            f"        case {i}: out{i}.write(in.read()); break;" for i in range(actor.branches))
    elif kind == "Select":
        out_bits = _bits(actor.outputs["out"])
        subs["lanes"] = lanes[actor.outputs["out"].name]
        subs["cases"] = "\n".join(
            f"        case {i}: out.write(ap_int<{out_bits}>(in{i}.read())); break;"
            for i in range(actor.branches))
    head = _HEADER.substitute(name=actor.name, kind=kind, summary=summary)
    if helper is not None:
        head += _REQUANTIZE.substitute(helper, out_bits=p["out_bits"], out_frac=p["out_frac"])
    return head + _BODIES[kind].substitute(subs)


def _descriptor(kind: str, example: A.Actor, lanes: dict) -> str:
    ins, outs = ports_for(kind, example.params())
    rates = []
    for direction, names, chans in (("input", ins, example.inputs), ("output", outs, example.outputs)):
        for port in names:
            rates.append(f"{direction} {port}: ap_int<BITS> x LANES, 1 token per firing")
    if kind in ("Switch", "Select"):
        rates.append("ports: indexed by branch, one active branch per configuration")
    params = ", ".join(sorted(example.params())) or "none"
    return _DESCRIPTOR.substitute(kind=kind, params=params, ports="\n".join(rates))


def _xdf(graph: DataflowGraph) -> str:
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', f"<XDF name={quoteattr(graph.name)}>"]
    for actor in graph.actors.values():
        lines.append(f"  <Instance id={quoteattr(actor.name)}>")
        lines.append(f"    <Class name={quoteattr(actor.kind)}/>")
        for k, v in sorted(actor.params().items()):
            lines.append(f"    <Parameter name={quoteattr(k)} value={quoteattr(str(v))}/>")
        lines.append("  </Instance>")
    for ch in graph.channels:
        lines.append(
            f"  <Connection src={quoteattr(ch.src)} src-port={quoteattr(ch.src_port)} "
            f"dst={quoteattr(ch.dst)} dst-port={quoteattr(ch.dst_port)}>"
        )
        lines.append(f'    <Attribute name="bufferSize" value="{ch.capacity}"/>')
        lines.append("  </Connection>")
    lines.append("</XDF>")
    return "\n".join(lines) + "\n"


def emit(graph: DataflowGraph, model: QuantizedModel | None = None, outdir=None) -> EmissionBundle:
    """Generate the artifact set for ``graph``; writes it under ``outdir`` when given."""
    graph.validate()
    lanes = channel_lanes(graph)
    sources = {}
    script = [f"# synthesis driver for {graph.name}"]
    if model is not None:
        script.append(f"# datatype {model.config.label}, {model.param_bits} parameter bits")
    examples: dict[str, A.Actor] = {}
    for actor in graph.actors.values():
        rel = f"{SOURCE_DIR}/{actor.name}.cpp"
        sources[rel] = _source_text(graph, actor, lanes)
        script.append(f"synth {rel} -top {actor.name}")
        examples.setdefault(actor.kind, actor)
    descriptors = {k: _descriptor(k, a, lanes) for k, a in sorted(examples.items())}
    bundle = EmissionBundle(dict(sorted(sources.items())), "\n".join(script) + "\n",
                            _xdf(graph), descriptors)
    if outdir is not None:
        bundle.write(outdir)
    return bundle


_TABLE_RE = re.compile(r"static const ap_int<(\d+)> (\w+)\[(\d+)\] = \{([^}]*)\};")


def embedded_parameter_bits(bundle: EmissionBundle) -> int:
    """Sum of width x entries over every parameter table in the emitted sources."""
    total = 0
    for rel, text in bundle.layer_sources.items():
        for bits, name, n, body in _TABLE_RE.findall(text):
            values = [v for v in body.replace("\n", " ").split(",") if v.strip()]
            if len(values) != int(n):
                raise SchemaViolation(f"{rel}: table {name} declares {n} entries, holds {len(values)}")
            total += int(bits) * int(n)
    return total


# ---------------------------------------------------------------------------
# XDF parsing

_INT_RE = re.compile(r"-?\d+")


def _value(text: str):
    return int(text) if _INT_RE.fullmatch(text) else text


def parse_topology(xdf_text: str) -> Structure:
    """Rebuild the topology skeleton (actors, parameters, connections) from XDF text."""
    parser = expat.ParserCreate()
    stack: list[str] = []
    state = {"name": None, "instances": {}, "order": [], "connections": [], "current": None,
             "conn": None}

    def where():
        return f"line {parser.CurrentLineNumber}"

    def need(attrs, key, element):
        if key not in attrs:
            raise SchemaViolation(f"{where()}: <{element}> lacks attribute {key!r}")
        return attrs[key]

    def start(tag, attrs):
        parent = stack[-1] if stack else None
        if tag == "XDF":
            if parent is not None:
                raise SchemaViolation(f"{where()}: nested <XDF>")
            state["name"] = need(attrs, "name", tag)
        elif tag == "Instance" and parent == "XDF":
            iid = need(attrs, "id", tag)
            if iid in state["instances"]:
                raise SchemaViolation(f"{where()}: duplicate instance id {iid!r}")
            state["instances"][iid] = {"kind": None, "params": {}, "line": parser.CurrentLineNumber}
            state["order"].append(iid)
            state["current"] = iid
        elif tag == "Class" and parent == "Instance":
            kind = need(attrs, "name", tag)
            if kind not in _KIND_CLASSES:
                raise SchemaViolation(f"{where()}: unknown actor class {kind!r}")
            inst = state["instances"][state["current"]]
            if inst["kind"] is not None:
                raise SchemaViolation(f"{where()}: instance {state['current']!r} has two classes")
            inst["kind"] = kind
        elif tag == "Parameter" and parent == "Instance":
            name = need(attrs, "name", tag)
            state["instances"][state["current"]]["params"][name] = _value(need(attrs, "value", tag))
        elif tag == "Connection" and parent == "XDF":
            conn = [need(attrs, k, tag) for k in ("src", "src-port", "dst", "dst-port")]
            conn.append(None)
            conn.append(parser.CurrentLineNumber)
            state["connections"].append(conn)
            state["conn"] = conn
        elif tag == "Attribute" and parent == "Connection":
            if need(attrs, "name", tag) == "bufferSize":
                value = need(attrs, "value", tag)
                if not _INT_RE.fullmatch(value) or int(value) < 1:
                    raise SchemaViolation(f"{where()}: bufferSize {value!r} is not a positive integer")
                state["conn"][4] = int(value)
        else:
            raise SchemaViolation(f"{where()}: unexpected <{tag}> inside <{parent or 'document'}>")
        stack.append(tag)

    def end(tag):
        stack.pop()

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(xdf_text, True)
    except expat.ExpatError as exc:
        raise SchemaViolation(f"malformed XML: {exc}") from exc
    if state["name"] is None:
        raise SchemaViolation("missing <XDF> root element")

    instances = state["instances"]
    ports = {}
    for iid in state["order"]:
        inst = instances[iid]
        if inst["kind"] is None:
            raise SchemaViolation(f"line {inst['line']}: instance {iid!r} has no <Class>")
        try:
            ports[iid] = ports_for(inst["kind"], inst["params"])
        except KeyError as exc:
            raise SchemaViolation(f"line {inst['line']}: instance {iid!r} lacks parameter {exc}") from None
    used_in: set = set()
    used_out: set = set()
    conns = []
    for src, sp, dst, dp, cap, line in state["connections"]:
        for actor, port, side, used in ((src, sp, 1, used_out), (dst, dp, 0, used_in)):
            if actor not in instances:
                raise SchemaViolation(f"line {line}: connection names unknown actor {actor!r}")
            if port not in ports[actor][side]:
                raise SchemaViolation(f"line {line}: actor {actor!r} has no port {port!r}")
            if (actor, port) in used:
                raise SchemaViolation(f"line {line}: Port {port!r} of actor {actor!r} connected twice")
            used.add((actor, port))
        conns.append((src, sp, dst, dp, cap if cap is not None else DEFAULT_FIFO_CAPACITY))
    for iid in state["order"]:
        ins, outs = ports[iid]
        for port in ins:
            if (iid, port) not in used_in:
                raise SchemaViolation(f"Port '{port}' of actor '{iid}' unconnected")
        for port in outs:
            if (iid, port) not in used_out:
                raise SchemaViolation(f"Port '{port}' of actor '{iid}' unconnected")
    actors = tuple(sorted(
        (iid, instances[iid]["kind"], tuple(sorted(instances[iid]["params"].items())))
        for iid in state["order"]
    ))
    return Structure(state["name"], actors, tuple(sorted(conns)))

