"""Tick-driven execution of a :class:`DataflowGraph`."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DeadlockDetected
from . import actors as A
from .graph import DataflowGraph


@dataclass
class SimulationMetrics:
    latency_cycles: int
    interval_cycles: int
    mult_total: int
    mult_zero_skippable: int
    images: int = 1
    total_cycles: int = 0
    latencies: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("latencies")
        return json.dumps(d, sort_keys=True)


@dataclass
class RoundRobin:
    """Fixed actor order, every ready actor fires once per tick, two-phase FIFOs."""

    strict = True

    def order(self, actors: list):
        return actors

    def fires(self) -> bool:
        return True


@dataclass
class RandomScheduler:
    """Shuffled order and random stalls with immediate token visibility.

    Only the output streams are schedule-independent under this scheduler;
    cycle counts are not meaningful.
    """

    seed: int = 0
    stall_probability: float = 0.3
    strict = False

    def __post_init__(self):
        self._rng = random.Random(self.seed)

    def order(self, actors: list):
        actors = list(actors)
        self._rng.shuffle(actors)
        return actors

    def fires(self) -> bool:
        return self._rng.random() >= self.stall_probability


def _dump(graph: DataflowGraph) -> str:
    return ", ".join(f"{c.name}={len(c.queue)}/{c.capacity}" for c in graph.channels)


def run_stream(graph: DataflowGraph, images: list, scheduler=None, check: bool = False):
    """Stream ``images`` (input code arrays) back to back through ``graph``.

    Returns (list of output code arrays, SimulationMetrics). The run continues
    until no actor can fire so that the channel ledger is schedule independent.
    """
    scheduler = scheduler or RoundRobin()
    source = graph.actors[graph.source]
    sink = graph.actors[graph.sink]
    for ch in graph.channels:
        ch.reset()
        ch.strict = scheduler.strict
        ch.check = check
    for actor in graph.actors.values():
        actor.bind()
        actor.reset()
    layout = graph.input_layout
    source.load([A.to_tokens(img, layout) for img in images])
    sink.expected = len(images)

    actors = list(graph.actors.values())
    now = 0
    strict = scheduler.strict
    if strict:
        while True:
            fired = False
            for actor in actors:
                if actor.ready(now):
                    actor.fire(now)
                    fired = True
            if not fired:
                break
            now += 1
    else:
        while True:
            ready = [a for a in scheduler.order(actors) if a.ready(now)]
            if not ready:
                break
            for actor in ready:
                if actor.ready(now) and scheduler.fires():
                    actor.fire(now)
            now += 1
    if not sink.complete:
        raise DeadlockDetected(
            f"no actor can fire at tick {now} with {len(sink.done_at)}/{len(images)} "
            f"images complete; occupancy: {_dump(graph)}"
        )

    outputs = [A.from_tokens(toks, graph.output_layout) for toks in sink.images]
    starts = source.image_start
    latencies = [done - start for start, done in zip(starts, sink.done_at)]
    if len(sink.done_at) > 1:
        interval = sink.done_at[-1] - sink.done_at[-2]
    else:
        interval = latencies[0] if latencies else 0
    mult_total = sum(getattr(a, "mult_total", 0) for a in actors)
    mult_zero = sum(getattr(a, "mult_zero", 0) for a in actors)
    metrics = SimulationMetrics(
        latency_cycles=latencies[0] if latencies else 0,
        interval_cycles=interval,
        mult_total=mult_total,
        mult_zero_skippable=mult_zero,
        images=len(images),
        total_cycles=now,
        latencies=latencies,
    )
    return outputs, metrics


def run_image(graph: DataflowGraph, image, scheduler=None, check: bool = False):
    """Run one image; returns (output codes, SimulationMetrics)."""
    layout = graph.input_layout
    size = layout[1] if layout[0] == "vector" else layout[1] * layout[2] * layout[3]
    if np.asarray(image).size != size:
        raise ValueError(f"image has {np.asarray(image).size} codes, source expects {size}")
    outputs, metrics = run_stream(graph, [image], scheduler, check)
    return outputs[0], metrics
