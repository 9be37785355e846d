import numpy as np
import pytest

from onnxflow import explorer
from onnxflow.errors import EmptyInput
from onnxflow.quantizer import DatatypeError
from onnxflow.explorer import CSV_HEADER, ExplorationReport, ReportRow

HEADER = ("datatype,zero_weights_pct,param_bits,bram36,latency_cycles,interval_cycles,"
          "accuracy_pct,zero_mults_pct")


def _row(dt="D16-W8", acc=98.5):
    return ReportRow(dt, 3.18, 42448, 2, 738, 784, acc, 2.71)


def test_header_only_csv():
    assert explorer.render_report(ExplorationReport()) == HEADER + "\n"
    assert ",".join(CSV_HEADER) == HEADER


def test_one_row_csv():
    text = explorer.render_report(ExplorationReport([_row()]))
    assert text.splitlines() == [HEADER, "D16-W8,3.18,42448,2,738,784,98.50,2.71"]


def test_markdown_round_trip():
    rows = [_row("D16-W16", 98.3), _row("D16-W8", 98.5), _row("D16-W2", 7.7)]
    report = ExplorationReport(rows, model="m", eval_images=10, calibration_images=4, seed=0)
    for fmt in ("markdown", "csv"):
        assert explorer.read_table(explorer.render_report(report, fmt)) == rows


def test_unknown_format():
    with pytest.raises(ValueError):
        explorer.render_report(ExplorationReport(), "html")


def test_bram36():
    assert [explorer.bram36(b) for b in (0, 1, 36864, 36865, 169792)] == [0, 1, 1, 2, 5]


def test_sample_indices_deterministic():
    a = explorer.sample_eval_indices(10000, 50, 3)
    assert np.array_equal(a, explorer.sample_eval_indices(10000, 50, 3))
    assert not np.array_equal(a, explorer.sample_eval_indices(10000, 50, 4))
    assert np.all(np.diff(a) > 0)
    assert np.array_equal(explorer.sample_eval_indices(5, 50, 3), np.arange(5))


def test_empty_eval_set(fixture_ir, calib):
    with pytest.raises(EmptyInput):
        explorer.explore(fixture_ir, ["D16-W8"], calib, np.zeros((0, 1, 28, 28)), [])


def test_small_sweep_properties(fixture_ir, calib, mnist_test, tmp_path):
    idx = explorer.sample_eval_indices(len(mnist_test), 40, 0)
    images, labels = mnist_test.normalized(idx), mnist_test.labels[idx]
    grid = ["D16-W16", "D16-W8", "D16-W4", "D16-W2"]
    report = explorer.explore(fixture_ir, grid, calib, images, labels, seed=0)
    again = explorer.explore(fixture_ir, grid, calib, images, labels, seed=0, jobs=2)
    assert [r.datatype for r in report.rows] == grid
    assert explorer.render_report(report) == explorer.render_report(again)
    zeros = [r.zero_weights_pct for r in report.rows]
    bits = [r.param_bits for r in report.rows]
    assert zeros == sorted(zeros)
    assert bits[1] * 2 == bits[0] and bits == sorted(bits, reverse=True)
    for r in report.rows:
        assert r.bram36 == explorer.bram36(r.param_bits)
        assert 0 <= r.zero_mults_pct <= 100
    before = explorer.render_report(report)
    explorer.plot_report(report, tmp_path / "acc.png")
    assert (tmp_path / "acc.png").stat().st_size > 0
    assert explorer.render_report(report) == before


def test_failing_datatype_aborts(fixture_ir, calib, mnist_test):
    with pytest.raises(DatatypeError) as err:
        explorer.explore(fixture_ir, ["D16-W8", "D5-W8"], calib, mnist_test.normalized([0]), [0])
    assert "D5" in str(err.value)


@pytest.mark.slow
def test_d32_matches_float(fixture_ir, calib, mnist_test):
    idx = explorer.sample_eval_indices(len(mnist_test), 1000, 0)
    report = explorer.explore(fixture_ir, ["D32-W32"], calib, mnist_test.normalized(idx),
                              mnist_test.labels[idx], seed=0)
    assert len(report.rows) == 1
    assert abs(report.rows[0].accuracy_pct - report.float_accuracy_pct) <= 0.1
