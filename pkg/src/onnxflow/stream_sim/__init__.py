"""Streaming dataflow simulator: actors, graphs, execution and the direct-inference oracle."""

from .actors import (
    Actor,
    FifoChannel,
    LineBufferState,
    conv_fire,
    line_buffer_step,
)
from .graph import DEFAULT_FIFO_CAPACITY, DataflowGraph, Structure, build_dataflow
from .reference import quantized_inference, reference_inference
from .simulator import RandomScheduler, RoundRobin, SimulationMetrics, run_image, run_stream

__all__ = [
    "Actor",
    "DEFAULT_FIFO_CAPACITY",
    "DataflowGraph",
    "FifoChannel",
    "LineBufferState",
    "RandomScheduler",
    "RoundRobin",
    "SimulationMetrics",
    "Structure",
    "build_dataflow",
    "conv_fire",
    "line_buffer_step",
    "quantized_inference",
    "reference_inference",
    "run_image",
    "run_stream",
]
