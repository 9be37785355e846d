from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from onnxflow import layer_ir, mnist, onnx_ingest

FIXTURES = Path(onnx_ingest.__file__).parent / "fixtures"
FIXTURE_ONNX = FIXTURES / "mnist_cnn.onnx"
FIXTURE_JSON = FIXTURES / "mnist_cnn.json"
MNIST_ROOT = mnist.default_root()


@pytest.fixture(scope="session")
def fixture_raw():
    return onnx_ingest.load_model(FIXTURE_ONNX)


@pytest.fixture(scope="session")
def fixture_ir(fixture_raw):
    return layer_ir.build_ir(fixture_raw)


@pytest.fixture(scope="session")
def mnist_train():
    return mnist.load_split(MNIST_ROOT, "train")


@pytest.fixture(scope="session")
def mnist_test():
    return mnist.load_split(MNIST_ROOT, "test")


@pytest.fixture(scope="session")
def calib(mnist_train):
    return mnist_train.normalized(np.arange(256))


# criterion number -> (passed, one-line summary); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {line}")
