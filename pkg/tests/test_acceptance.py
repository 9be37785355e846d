"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import gzip
import time

import numpy as np
import pytest

from onnxflow import cli, codegen, explorer, mnist, randnet
from onnxflow.composer import active_structure, execute_config, merge
from onnxflow.onnx_ingest import decode_json_mirror, decode_onnx
from onnxflow.quantizer import (
    ALLOWED_BITS,
    FixedPointFormat,
    format_for_max_abs,
    quantize_array,
)
from onnxflow.stream_sim import RandomScheduler, build_dataflow, reference_inference, run_image, run_stream

from .conftest import ACCEPTANCE, FIXTURE_JSON, FIXTURE_ONNX, MNIST_ROOT

TABLE_ROWS = ["D32-W32", "D16-W16", "D8-W16", "D16-W8", "D16-W4", "D16-W2"]
SWEEP = ["D16-W16", "D16-W8", "D16-W4", "D16-W2"]
EVAL_IMAGES = 1000
PROPERTY_SAMPLES = 100_000


def _gate(number: int, checks: dict, detail: str, started: float, budget_s: float):
    elapsed = time.perf_counter() - started
    checks = dict(checks, **{f"runtime {elapsed:.1f}s < {budget_s:.0f}s": elapsed < budget_s})
    failed = [name for name, ok in checks.items() if not ok]
    line = f"{detail}; {elapsed:.1f}s" + (f"; failed: {', '.join(failed)}" if failed else "")
    ACCEPTANCE[number] = (not failed, line)
    print(f"\n[{'PASS' if not failed else 'FAIL'}] criterion {number}: {line}")
    assert not failed, line


def _random_formats(rng, n):
    total = rng.choice(ALLOWED_BITS, size=n)
    frac = (rng.random(n) * total).astype(np.int64)  # uniform in [0, total - 1]
    return total, frac


def test_criterion_1_stream_matches_reference():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    mismatches = checked = 0
    for _ in range(200):
        model = randnet.random_model(rng)
        graph = build_dataflow(model)
        codes = randnet.random_input_codes(rng, model)
        out, _ = run_image(graph, codes)
        checked += 1
        mismatches += not np.array_equal(out, reference_inference(model, codes))
    _gate(1, {"bit-exact on every model": mismatches == 0},
          f"{checked} random models, {mismatches} mismatches", t0, 120)


def test_criterion_2_quantizer_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1002)
    n = PROPERTY_SAMPLES
    results = {}

    # half-ULP bound on in-range values, checked as |code - x * 2**frac| <= 1/2
    total, frac = _random_formats(rng, n)
    lo = -(2.0 ** (total - 1)) * 2.0 ** -frac
    hi = (2.0 ** (total - 1) - 1) * 2.0 ** -frac
    x = lo + rng.random(n) * (hi - lo)
    bad = 0
    for t in ALLOWED_BITS:
        for f in range(t):
            sel = (total == t) & (frac == f)
            if sel.any():
                fmt = FixedPointFormat(t, f)
                codes = quantize_array(x[sel], fmt)
                bad += int(np.count_nonzero(np.abs(codes - np.ldexp(x[sel], f)) > 0.5))
    results["half-ULP"] = bad

    # saturation: values beyond either end clamp to the extreme code
    total, frac = _random_formats(rng, n)
    bad = 0
    for i in range(n):
        fmt = FixedPointFormat(int(total[i]), int(frac[i]))
        span = 1 + rng.random() * 2.0 ** fmt.int_bits * 4
        above, below = fmt.max_value + span, fmt.min_value - span
        bad += int(quantize_array(above, fmt)) != fmt.max_code
        bad += int(quantize_array(below, fmt)) != fmt.min_code
    results["saturation"] = bad

    # monotonicity over random ordered pairs in the same format
    total, frac = _random_formats(rng, n)
    scale = 2.0 ** (total - 1 - frac)
    a = rng.normal(size=n) * scale
    b = a + np.abs(rng.normal(size=n)) * scale * rng.choice([1e-6, 1e-2, 1.0], size=n)
    bad = 0
    for t in ALLOWED_BITS:
        for f in range(t):
            sel = (total == t) & (frac == f)
            if sel.any():
                fmt = FixedPointFormat(t, f)
                bad += int(np.count_nonzero(quantize_array(a[sel], fmt) > quantize_array(b[sel], fmt)))
    results["monotonicity"] = bad

    # zero-set nesting: calibrated from the same max |value|, a code that is
    # zero at some width stays zero at every narrower width
    max_abs = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=n))
    x = max_abs * rng.uniform(-1, 1, size=n)
    wide = rng.choice(ALLOWED_BITS[1:], size=n)
    bad = 0
    for i in range(n):
        w = int(wide[i])
        narrow = int(rng.choice([v for v in ALLOWED_BITS if v < w]))
        if int(quantize_array(x[i], format_for_max_abs(max_abs[i], w))) == 0:
            bad += int(quantize_array(x[i], format_for_max_abs(max_abs[i], narrow))) != 0
    results["zero-set nesting"] = bad

    detail = ", ".join(f"{k} {v} violations" for k, v in results.items())
    _gate(2, {k: v == 0 for k, v in results.items()},
          f"{n} samples per property: {detail}", t0, 60)


@pytest.fixture(scope="module")
def eval_set():
    test = mnist.load_split(MNIST_ROOT, "test")
    idx = explorer.sample_eval_indices(len(test), EVAL_IMAGES, 0)
    return test.normalized(idx), test.labels[idx]


def _trend_checks(rows: dict, float_acc: float) -> dict:
    w16, w8, w4, w2 = (rows[d] for d in SWEEP)
    zeros = [r.zero_weights_pct for r in (w16, w8, w4, w2)]
    return {
        "(b) W16 within 1.5 of float": abs(w16.accuracy_pct - float_acc) <= 1.5,
        "(b) W8 within 1.5 of float": abs(w8.accuracy_pct - float_acc) <= 1.5,
        "(c) W2 >= 10 below W8": w8.accuracy_pct - w2.accuracy_pct >= 10,
        "(d) zero weights non-decreasing": zeros == sorted(zeros),
        "(e) param bits halve W16->W8": w16.param_bits == 2 * w8.param_bits,
    }


def _trend_detail(rows: dict, float_acc: float) -> str:
    acc = " ".join(f"{d}={rows[d].accuracy_pct:.1f}%" for d in SWEEP)
    zeros = "/".join(f"{rows[d].zero_weights_pct:.1f}" for d in SWEEP)
    return f"float={float_acc:.1f}% {acc}; zero weights {zeros}%"


def test_criterion_3_table_trends(fixture_ir, calib, eval_set):
    t0 = time.perf_counter()
    images, labels = eval_set
    report = explorer.explore(fixture_ir, SWEEP, calib, images, labels, seed=0)
    rows = {r.datatype: r for r in report.rows}
    checks = {"(a) float accuracy >= 95%": report.float_accuracy_pct >= 95.0}
    checks.update(_trend_checks(rows, report.float_accuracy_pct))
    _gate(3, checks, _trend_detail(rows, report.float_accuracy_pct), t0, 600)


def test_criterion_4_scheduling_determinacy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1004)
    diverged = 0
    for _ in range(50):
        model = randnet.random_model(rng)
        graph = build_dataflow(model, fifo_capacity=int(rng.integers(1, 5)))
        images = [randnet.random_input_codes(rng, model) for _ in range(2)]
        runs = []
        for seed in rng.integers(0, 2 ** 31, size=2):
            out, _ = run_stream(graph, images, scheduler=RandomScheduler(int(seed)))
            runs.append((out, graph.ledger()))
        (out_a, led_a), (out_b, led_b) = runs
        same = led_a == led_b and all(np.array_equal(x, y) for x, y in zip(out_a, out_b))
        conserved = all(p == c + o for p, c, o in led_a.values())
        diverged += not (same and conserved)
    _gate(4, {"identical streams and ledgers": diverged == 0},
          f"50 graphs x 2 random schedules, {diverged} divergent", t0, 60)


def test_criterion_5_composer_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1005)
    mismatches = structural = over_budget = 0
    for i in range(50):
        base = randnet.random_model(rng)
        variant = randnet.random_variant(rng, base, f"variant{i}")
        graphs = [build_dataflow(base, name="base"), build_dataflow(variant, name="variant")]
        md, table = merge(graphs)
        # every pair shares at least the source actor, so the bound must be strict
        over_budget += md.actor_count >= sum(len(g.actors) for g in graphs)
        for cfg, g in enumerate(graphs):
            structural += active_structure(md, table, cfg) != g.structure()
            for _ in range(20):
                codes = randnet.random_input_codes(rng, base)
                want, _ = run_image(g, codes)
                mismatches += not np.array_equal(execute_config(md, table, cfg, codes), want)
    _gate(5, {"bit-exact configs": mismatches == 0, "active subgraph = source": structural == 0,
              "actor count < sum": over_budget == 0},
          f"50 pairs x 2 configs x 20 inputs, {mismatches} mismatches, "
          f"{over_budget} merges without savings", t0, 120)


def test_criterion_6_emission_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1006)
    structure = determinism = bits = 0
    for _ in range(50):
        model = randnet.random_model(rng)
        graph = build_dataflow(model, fifo_capacity=int(rng.integers(1, 100)))
        bundle = codegen.emit(graph, model)
        structure += codegen.parse_topology(bundle.topology_xdf) != graph.structure()
        determinism += codegen.emit(build_dataflow(model, fifo_capacity=graph.channels[0].capacity),
                                    model).files() != bundle.files()
        bits += codegen.embedded_parameter_bits(bundle) != model.param_bits
    _gate(6, {"structure": structure == 0, "byte determinism": determinism == 0,
              "parameter bits": bits == 0},
          f"50 graphs: {structure} structural, {determinism} nondeterministic, "
          f"{bits} bit-count mismatches", t0, 60)


def test_criterion_7_cli_explore(tmp_path, fixture_ir, eval_set):
    t0 = time.perf_counter()
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"report_{run}.csv"
        code = cli.main(["explore", "--model", str(FIXTURE_ONNX), "--grid", ",".join(TABLE_ROWS),
                         "--mnist", str(MNIST_ROOT), "--seed", "0", "--out", str(out)])
        assert code == 0
        outputs.append(out.read_bytes())
    rows = {r.datatype: r for r in explorer.read_table(outputs[0].decode())}
    images, labels = eval_set
    float_acc = explorer.float_accuracy(fixture_ir, images, labels)
    checks = {"6 rows with the table labels": list(rows) == TABLE_ROWS,
              "byte-identical reruns": outputs[0] == outputs[1]}
    checks.update(_trend_checks(rows, float_acc))
    _gate(7, checks, f"{len(rows)} rows; " + _trend_detail(rows, float_acc), t0, 900)


def test_criterion_8_ingestion_fidelity():
    t0 = time.perf_counter()
    checks = {}
    for split, count in (("train", 60000), ("test", 10000)):
        images_file, labels_file = mnist.FILES[split]
        # headers read independently of the loader: big-endian magic then count
        img_bytes = gzip.decompress((MNIST_ROOT / f"{images_file}.gz").read_bytes())
        lab_bytes = gzip.decompress((MNIST_ROOT / f"{labels_file}.gz").read_bytes())
        checks[f"{split} image magic"] = int.from_bytes(img_bytes[:4], "big") == 0x00000803
        checks[f"{split} label magic"] = int.from_bytes(lab_bytes[:4], "big") == 0x00000801
        checks[f"{split} header counts"] = (
            int.from_bytes(img_bytes[4:8], "big") == int.from_bytes(lab_bytes[4:8], "big") == count)
        data = mnist.load_split(MNIST_ROOT, split)
        checks[f"{split} count {count}"] = len(data) == count == len(data.labels)
        checks[f"{split} 28x28"] = data.images.shape[1:] == (28, 28)
    binary = decode_onnx(FIXTURE_ONNX.read_bytes())
    checks["binary == JSON mirror"] = binary == decode_json_mirror(FIXTURE_JSON.read_text())
    _gate(8, checks, "IDX magic numbers and 60000/10000 counts, fixture binary/JSON decodes",
          t0, 60)
