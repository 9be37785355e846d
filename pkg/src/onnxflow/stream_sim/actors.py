"""Dataflow actors and bounded FIFO channels.

Data tokens are int64 vectors: one token per pixel position (all channels of
that pixel) for feature maps, a single token for a flat vector. Parameter
stores emit :class:`QuantizedTensor` tokens so the consuming actor picks up
the parameter format from the token itself.

Each actor fires at most once per tick. In strict (two-phase) mode a token
pushed at tick ``t`` becomes visible at ``t + 1`` and a slot freed at ``t``
becomes reusable at ``t + 1``, so the cycle count does not depend on the
order actors are visited within a tick.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ..quantizer import FixedPointFormat, QuantizedTensor
from . import arith


class FifoChannel:
    __slots__ = ("name", "src", "src_port", "dst", "dst_port", "capacity", "format",
                 "queue", "produced", "consumed", "strict", "check", "_pop_tick", "_pops",
                 "peak")

    def __init__(self, src: str, src_port: str, dst: str, dst_port: str,
                 capacity: int, fmt: FixedPointFormat | None = None):
        if capacity < 1:
            raise ValueError("FIFO capacity must be at least 1")
        self.src, self.src_port, self.dst, self.dst_port = src, src_port, dst, dst_port
        self.name = f"{src}.{src_port}->{dst}.{dst_port}"
        self.capacity = capacity
        self.format = fmt
        self.strict = True
        self.check = False
        self.reset()

    def reset(self) -> None:
        self.queue: deque = deque()
        self.produced = 0
        self.consumed = 0
        self.peak = 0
        self._pop_tick = -1
        self._pops = 0

    def has_token(self, now: int) -> bool:
        q = self.queue
        return bool(q) and (not self.strict or q[0][0] < now)

    def has_space(self, now: int) -> bool:
        used = len(self.queue)
        if self.strict and self._pop_tick == now:
            used += self._pops
        return used < self.capacity

    def push(self, token, now: int) -> None:
        if self.check:
            if len(self.queue) >= self.capacity:
                raise AssertionError(f"{self.name}: push into a full FIFO")
            fmt = self.format
            if fmt is not None and isinstance(token, np.ndarray) and token.size and (
                token.min() < fmt.min_code or token.max() > fmt.max_code
            ):
                raise AssertionError(f"{self.name}: token outside {fmt}")
        self.queue.append((now, token))
        self.produced += 1
        if len(self.queue) > self.peak:
            self.peak = len(self.queue)

    def pop(self, now: int):
        if self.strict:
            if self._pop_tick != now:
                self._pop_tick = now
                self._pops = 0
            self._pops += 1
        self.consumed += 1
        return self.queue.popleft()[1]

    def ledger(self) -> tuple[int, int, int]:
        return self.produced, self.consumed, len(self.queue)


class Actor:
    kind = "Actor"
    in_ports: tuple[str, ...] = ("in",)
    out_ports: tuple[str, ...] = ("out",)

    def __init__(self, name: str):
        self.name = name
        self.inputs: dict[str, FifoChannel] = {}
        self.outputs: dict[str, FifoChannel] = {}

    # configuration -----------------------------------------------------
    def params(self) -> dict:
        """Scalar configuration (shapes, bit widths)."""
        return {}

    def arrays(self) -> dict[str, np.ndarray]:
        """Stored parameter codes."""
        return {}

    def signature(self) -> tuple:
        arrays = tuple(
            (k, a.dtype.str, a.shape, a.tobytes()) for k, a in sorted(self.arrays().items())
        )
        return (self.kind, tuple(sorted(self.params().items())), arrays)

    def clone(self, name: str) -> "Actor":
        raise NotImplementedError

    # execution ---------------------------------------------------------
    def bind(self) -> None:
        missing = [p for p in self.in_ports if p not in self.inputs]
        missing += [p for p in self.out_ports if p not in self.outputs]
        if missing:
            raise ValueError(f"actor {self.name!r}: unconnected ports {missing}")
        if "in" in self.in_ports:
            self._in = self.inputs["in"]
        if "out" in self.out_ports:
            self._out = self.outputs["out"]

    def reset(self) -> None:
        pass

    def ready(self, now: int) -> bool:
        return self._in.has_token(now) and self._out.has_space(now)

    def fire(self, now: int) -> None:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# stream endpoints

class Source(Actor):
    kind = "Source"
    in_ports = ()

    def __init__(self, name: str, layout: tuple):
        super().__init__(name)
        self.layout = tuple(layout)

    def params(self):
        return layout_params(self.layout)

    def clone(self, name):
        return Source(name, self.layout)

    def reset(self):
        self.pending: deque = deque()  # (starts_image, token)
        self.image_start: list[int] = []

    def load(self, images_tokens: list[list[np.ndarray]]) -> None:
        for tokens in images_tokens:
            self.pending.extend((i == 0, tok) for i, tok in enumerate(tokens))

    def ready(self, now):
        return bool(self.pending) and self._out.has_space(now)

    def fire(self, now):
        first, token = self.pending.popleft()
        if first:
            self.image_start.append(now)
        self._out.push(token, now)


class Sink(Actor):
    kind = "Sink"
    out_ports = ()

    def __init__(self, name: str, layout: tuple):
        super().__init__(name)
        self.layout = tuple(layout)
        self.per_image = tokens_per_image(self.layout)

    def params(self):
        return layout_params(self.layout)

    def clone(self, name):
        return Sink(name, self.layout)

    def reset(self):
        self.images: list[list[np.ndarray]] = []
        self.done_at: list[int] = []
        self._current: list[np.ndarray] = []
        self.expected = 0

    @property
    def complete(self) -> bool:
        return len(self.done_at) >= self.expected

    def ready(self, now):
        return self._in.has_token(now)

    def fire(self, now):
        self._current.append(self._in.pop(now))
        if len(self._current) == self.per_image:
            self.images.append(self._current)
            self.done_at.append(now)
            self._current = []


# ---------------------------------------------------------------------------
# sliding windows

class LineBufferState:
    """k-row ring buffer walking the zero-padded plane in row-major order.

    Each :meth:`advance` handles one padded position; real positions need an
    input pixel token, padding positions synthesize zeros. A window (flattened
    in (ky, kx, channel) order) is returned when the position completes a
    stride-aligned k x k window.
    """

    def __init__(self, channels: int, height: int, width: int, k: int, stride: int, pad: int = 0):
        self.c, self.h, self.w = channels, height, width
        self.k, self.s, self.p = k, stride, pad
        self.hp, self.wp = height + 2 * pad, width + 2 * pad
        if self.hp < k or self.wp < k:
            raise ValueError("window larger than padded plane")
        self.out_h = (self.hp - k) // stride + 1
        self.out_w = (self.wp - k) // stride + 1
        self.rows = np.zeros((k, self.wp, channels), dtype=np.int64)
        self.reset()

    def reset(self) -> None:
        self.r = 0
        self.col = 0
        self.rows[:] = 0

    def needs_input(self) -> bool:
        p = self.p
        return p <= self.r < self.h + p and p <= self.col < self.w + p

    def emits(self) -> bool:
        k, s = self.k, self.s
        r0, c0 = self.r - k + 1, self.col - k + 1
        return r0 >= 0 and c0 >= 0 and r0 % s == 0 and c0 % s == 0

    def advance(self, token) -> np.ndarray | None:
        k = self.k
        row = self.rows[self.r % k]
        if token is None:
            row[self.col] = 0
        else:
            row[self.col] = token
        window = None
        if self.emits():
            order = [(self.r - k + 1 + i) % k for i in range(k)]
            window = self.rows[order, self.col - k + 1:self.col + 1, :]
        self.col += 1
        if self.col == self.wp:
            self.col = 0
            self.r += 1
            if self.r == self.hp:
                self.r = 0
        return window


def line_buffer_step(state: LineBufferState, in_token) -> list[np.ndarray]:
    """Feed one real pixel; returns every window completed before the next one is needed.

    Padding positions ahead of the pixel and trailing it (up to the next real
    position or the end of the plane) are synthesized here.
    """
    windows = []
    while not state.needs_input():
        win = state.advance(None)
        if win is not None:
            windows.append(win.reshape(-1).copy())
    win = state.advance(np.asarray(in_token, dtype=np.int64))
    if win is not None:
        windows.append(win.reshape(-1).copy())
    while not state.needs_input() and not (state.r == 0 and state.col == 0):
        win = state.advance(None)
        if win is not None:
            windows.append(win.reshape(-1).copy())
    return windows


class LineBuffer(Actor):
    kind = "LineBuffer"

    def __init__(self, name, channels, height, width, kernel, stride, pad):
        super().__init__(name)
        self.cfg = (channels, height, width, kernel, stride, pad)
        self.state = LineBufferState(*self.cfg)

    def params(self):
        c, h, w, k, s, p = self.cfg
        return {"channels": c, "height": h, "width": w, "kernel": k, "stride": s, "pad": p}

    def clone(self, name):
        return LineBuffer(name, *self.cfg)

    def reset(self):
        self.state.reset()

    def ready(self, now):
        st = self.state
        if st.needs_input() and not self._in.has_token(now):
            return False
        return not st.emits() or self._out.has_space(now)

    def fire(self, now):
        st = self.state
        token = self._in.pop(now) if st.needs_input() else None
        win = st.advance(token)
        if win is not None:
            self._out.push(win.reshape(-1).copy(), now)


class MaxPool(Actor):
    kind = "MaxPool"

    def __init__(self, name, channels, height, width, window, stride):
        super().__init__(name)
        self.cfg = (channels, height, width, window, stride)
        self.state = LineBufferState(channels, height, width, window, stride, 0)

    def params(self):
        c, h, w, win, s = self.cfg
        return {"channels": c, "height": h, "width": w, "window": win, "stride": s}

    def clone(self, name):
        return MaxPool(name, *self.cfg)

    def reset(self):
        self.state.reset()

    def ready(self, now):
        return self._in.has_token(now) and (not self.state.emits() or self._out.has_space(now))

    def fire(self, now):
        win = self.state.advance(self._in.pop(now))
        if win is not None:
            self._out.push(win.max(axis=(0, 1)), now)


# ---------------------------------------------------------------------------
# parameter stores

class _Store(Actor):
    in_ports = ()

    def __init__(self, name: str, tensor: QuantizedTensor):
        super().__init__(name)
        self.tensor = tensor

    def params(self):
        f = self.tensor.format
        d = {"bits": f.total_bits, "frac": f.frac_bits}
        d.update(("dim%d" % i, n) for i, n in enumerate(self.tensor.codes.shape))
        return d

    def arrays(self):
        return {"codes": self.tensor.codes}

    def clone(self, name):
        return type(self)(name, self.tensor)

    def ready(self, now):
        return self._out.has_space(now)

    def fire(self, now):
        self._out.push(self.tensor, now)


class WeightStore(_Store):
    """Conv kernel codes laid out (out_channels, k * k * in_channels) in window order."""

    kind = "WeightStore"


class BiasStore(_Store):
    kind = "BiasStore"


# ---------------------------------------------------------------------------
# compute

class Conv(Actor):
    kind = "Conv"
    in_ports = ("in", "weights", "bias")

    def __init__(self, name, fan_in: int, out_channels: int,
                 in_fmt: FixedPointFormat, out_fmt: FixedPointFormat):
        super().__init__(name)
        self.fan_in, self.out_channels = fan_in, out_channels
        self.in_fmt, self.out_fmt = in_fmt, out_fmt
        self._plan_key = None

    def params(self):
        return {"fan_in": self.fan_in, "out_channels": self.out_channels,
                "in_bits": self.in_fmt.total_bits, "in_frac": self.in_fmt.frac_bits,
                "out_bits": self.out_fmt.total_bits, "out_frac": self.out_fmt.frac_bits}

    def clone(self, name):
        return Conv(name, self.fan_in, self.out_channels, self.in_fmt, self.out_fmt)

    def bind(self):
        super().bind()
        self._w = self.inputs["weights"]
        self._b = self.inputs["bias"]

    def reset(self):
        self.mult_total = 0
        self.mult_zero = 0

    def ready(self, now):
        return (self._in.has_token(now) and self._w.has_token(now)
                and self._b.has_token(now) and self._out.has_space(now))

    def _plan(self, w: QuantizedTensor, b: QuantizedTensor):
        key = (id(w), id(b))
        if key != self._plan_key:
            if w.codes.shape != (self.out_channels, self.fan_in):
                raise ValueError(f"{self.name}: weight token shape {w.codes.shape}")
            self._plan_key = key
            self._wide = arith.needs_wide(self.in_fmt, w.format, self.fan_in, b.format)
            self._wcodes = w.codes
            if self._wide:
                self._whi, self._wlo = arith.split_weights(w.codes)
                self._bias = b.codes.astype(object)
            else:
                self._bias = b.codes
            self._zeros = int(np.count_nonzero(w.codes == 0))
            self._acc_frac = self.in_fmt.frac_bits + w.format.frac_bits
            self._bias_frac = b.format.frac_bits

    def fire(self, now):
        x = self._in.pop(now)
        w = self._w.pop(now)
        b = self._b.pop(now)
        self._plan(w, b)
        if self._wide:
            acc = arith.join_split(self._whi @ x, self._wlo @ x)
        else:
            acc = self._wcodes @ x
        self.mult_total += self._wcodes.size
        self.mult_zero += self._zeros
        self._out.push(arith.requantize(acc, self._acc_frac, self._bias, self._bias_frac,
                                        self.out_fmt), now)


def conv_fire(window, weights: QuantizedTensor, bias: QuantizedTensor,
              in_fmt: FixedPointFormat, out_fmt: FixedPointFormat) -> np.ndarray:
    """One Conv firing outside a graph: window codes -> output codes per channel."""
    w = QuantizedTensor(np.asarray(weights.codes).reshape(len(bias.codes), -1), weights.format)
    actor = Conv("conv", w.codes.shape[1], w.codes.shape[0], in_fmt, out_fmt)
    actor.reset()
    actor._plan(w, bias)
    x = np.asarray(window, dtype=np.int64).reshape(-1)
    acc = arith.join_split(actor._whi @ x, actor._wlo @ x) if actor._wide else w.codes @ x
    return arith.requantize(acc, actor._acc_frac, actor._bias, actor._bias_frac, out_fmt)


class ScaleShift(Actor):
    kind = "ScaleShift"

    def __init__(self, name, scale: QuantizedTensor, shift: QuantizedTensor,
                 in_fmt: FixedPointFormat, out_fmt: FixedPointFormat):
        super().__init__(name)
        self.scale, self.shift = scale, shift
        self.in_fmt, self.out_fmt = in_fmt, out_fmt
        self._wide = arith.needs_wide(in_fmt, scale.format, 1, shift.format)
        self._a = scale.codes.astype(object) if self._wide else scale.codes
        self._b = shift.codes.astype(object) if self._wide else shift.codes
        self._acc_frac = in_fmt.frac_bits + scale.format.frac_bits

    def params(self):
        return {"channels": len(self.scale.codes),
                "in_bits": self.in_fmt.total_bits, "in_frac": self.in_fmt.frac_bits,
                "out_bits": self.out_fmt.total_bits, "out_frac": self.out_fmt.frac_bits,
                "scale_bits": self.scale.format.total_bits, "scale_frac": self.scale.format.frac_bits,
                "shift_bits": self.shift.format.total_bits, "shift_frac": self.shift.format.frac_bits}

    def arrays(self):
        return {"scale": self.scale.codes, "shift": self.shift.codes}

    def clone(self, name):
        return ScaleShift(name, self.scale, self.shift, self.in_fmt, self.out_fmt)

    def fire(self, now):
        x = self._in.pop(now)
        if self._wide:
            x = x.astype(object)
        self._out.push(arith.requantize(self._a * x, self._acc_frac, self._b,
                                        self.shift.format.frac_bits, self.out_fmt), now)


class Relu(Actor):
    kind = "Relu"

    def __init__(self, name, channels: int):
        super().__init__(name)
        self.channels = channels

    def params(self):
        return {"channels": self.channels}

    def clone(self, name):
        return Relu(name, self.channels)

    def fire(self, now):
        self._out.push(np.maximum(self._in.pop(now), 0), now)


class Flatten(Actor):
    """Reinterprets a pixel stream as a flat (C, H, W)-ordered vector; tokens pass unchanged."""

    kind = "Flatten"

    def __init__(self, name, channels, height, width):
        super().__init__(name)
        self.cfg = (channels, height, width)

    def params(self):
        c, h, w = self.cfg
        return {"channels": c, "height": h, "width": w}

    def clone(self, name):
        return Flatten(name, *self.cfg)

    def fire(self, now):
        self._out.push(self._in.pop(now), now)


class FullyConnected(Actor):
    """Accumulates one partial product per input token, emits one output token per image."""

    kind = "FullyConnected"

    def __init__(self, name, weights: QuantizedTensor, bias: QuantizedTensor,
                 in_layout: tuple, in_fmt: FixedPointFormat, out_fmt: FixedPointFormat):
        super().__init__(name)
        self.weights, self.bias = weights, bias
        self.in_layout = tuple(in_layout)
        self.in_fmt, self.out_fmt = in_fmt, out_fmt
        fo, fi = weights.codes.shape
        cols = token_columns(self.in_layout)
        if sum(len(c) for c in cols) != fi:
            raise ValueError(f"{name}: layout {in_layout} does not provide {fi} inputs")
        self._wide = arith.needs_wide(in_fmt, weights.format, fi, bias.format)
        w = weights.codes
        self._slices = [np.ascontiguousarray(w[:, c]) for c in cols]
        if self._wide:
            self._split = [arith.split_weights(s) for s in self._slices]
            self._b = bias.codes.astype(object)
        else:
            self._b = bias.codes
        self._zeros = [int(np.count_nonzero(s == 0)) for s in self._slices]
        self._acc_frac = in_fmt.frac_bits + weights.format.frac_bits

    def params(self):
        fo, fi = self.weights.codes.shape
        d = {"in_features": fi, "out_features": fo,
             "in_bits": self.in_fmt.total_bits, "in_frac": self.in_fmt.frac_bits,
             "out_bits": self.out_fmt.total_bits, "out_frac": self.out_fmt.frac_bits,
             "weight_bits": self.weights.format.total_bits,
             "weight_frac": self.weights.format.frac_bits,
             "bias_bits": self.bias.format.total_bits, "bias_frac": self.bias.format.frac_bits}
        d.update({"in_" + k: v for k, v in layout_params(self.in_layout).items()})
        return d

    def arrays(self):
        return {"weights": self.weights.codes, "bias": self.bias.codes}

    def clone(self, name):
        return FullyConnected(name, self.weights, self.bias, self.in_layout,
                              self.in_fmt, self.out_fmt)

    def reset(self):
        self.mult_total = 0
        self.mult_zero = 0
        self._t = 0
        fo = self.weights.codes.shape[0]
        self._acc = np.zeros(fo, dtype=np.int64)
        self._acc_lo = np.zeros(fo, dtype=np.int64)

    def ready(self, now):
        if not self._in.has_token(now):
            return False
        return self._t < len(self._slices) - 1 or self._out.has_space(now)

    def fire(self, now):
        x = self._in.pop(now)
        t = self._t
        if self._wide:
            hi, lo = self._split[t]
            self._acc += hi @ x
            self._acc_lo += lo @ x
        else:
            self._acc += self._slices[t] @ x
        self.mult_total += self._slices[t].size
        self.mult_zero += self._zeros[t]
        t += 1
        if t == len(self._slices):
            acc = arith.join_split(self._acc, self._acc_lo) if self._wide else self._acc
            self._out.push(arith.requantize(acc, self._acc_frac, self._b,
                                            self.bias.format.frac_bits, self.out_fmt), now)
            self._acc = np.zeros_like(self._acc)
            self._acc_lo = np.zeros_like(self._acc_lo)
            t = 0
        self._t = t


# ---------------------------------------------------------------------------
# routing (multi-dataflow)

class Switch(Actor):
    """1-in / N-out router; the active branch is set per configuration."""

    kind = "Switch"

    def __init__(self, name, branches: int):
        super().__init__(name)
        self.branches = branches
        self.out_ports = tuple(f"out{i}" for i in range(branches))
        self.route = 0

    def params(self):
        return {"branches": self.branches}

    def clone(self, name):
        return Switch(name, self.branches)

    def bind(self):
        super().bind()
        self._sel = self.outputs[f"out{self.route}"]

    def ready(self, now):
        return self._in.has_token(now) and self._sel.has_space(now)

    def fire(self, now):
        self._sel.push(self._in.pop(now), now)


class Select(Actor):
    """N-in / 1-out router; the active branch is set per configuration."""

    kind = "Select"

    def __init__(self, name, branches: int):
        super().__init__(name)
        self.branches = branches
        self.in_ports = tuple(f"in{i}" for i in range(branches))
        self.route = 0

    def params(self):
        return {"branches": self.branches}

    def clone(self, name):
        return Select(name, self.branches)

    def bind(self):
        super().bind()
        self._sel = self.inputs[f"in{self.route}"]

    def ready(self, now):
        return self._sel.has_token(now) and self._out.has_space(now)

    def fire(self, now):
        self._out.push(self._sel.pop(now), now)


# ---------------------------------------------------------------------------
# stream layouts

def layout_for_shape(shape: tuple) -> tuple:
    if len(shape) == 3:
        return ("pixels",) + tuple(int(v) for v in shape)
    if len(shape) == 1:
        return ("vector", int(shape[0]))
    raise ValueError(f"unsupported tensor shape {shape}")


def layout_params(layout: tuple) -> dict:
    if layout[0] == "vector":
        return {"layout": "vector", "length": layout[1]}
    c, h, w = layout[1:]
    return {"layout": layout[0], "channels": c, "height": h, "width": w}


def tokens_per_image(layout: tuple) -> int:
    return 1 if layout[0] == "vector" else layout[2] * layout[3]


def token_columns(layout: tuple) -> list[np.ndarray]:
    """Flat (C, H, W) indices carried by each token of a stream."""
    if layout[0] == "vector":
        return [np.arange(layout[1])]
    c, h, w = layout[1:]
    return [np.arange(c) * h * w + y * w + x for y in range(h) for x in range(w)]


def to_tokens(codes: np.ndarray, layout: tuple) -> list[np.ndarray]:
    codes = np.asarray(codes, dtype=np.int64)
    if layout[0] == "vector":
        return [codes.reshape(-1)]
    c, h, w = layout[1:]
    pix = codes.reshape(c, h, w).transpose(1, 2, 0).reshape(h * w, c)
    return list(pix)


def from_tokens(tokens: list[np.ndarray], layout: tuple) -> np.ndarray:
    if layout[0] == "vector":
        return np.asarray(tokens[0], dtype=np.int64)
    c, h, w = layout[1:]
    chw = np.stack(tokens).reshape(h, w, c).transpose(2, 0, 1)
    if layout[0] == "flat_pixels":
        return chw.reshape(-1)
    return chw
