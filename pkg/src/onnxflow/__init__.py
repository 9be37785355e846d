"""ONNX-to-hardware flow: ingest, quantize, simulate, compose, emit, explore."""

__version__ = "0.1.0"
