"""Datatype sweep: quantize, stream the evaluation images, tabulate cost and accuracy."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import float_model
from .errors import EmptyInput, FlowError
from .layer_ir import ModelIR
from .quantizer import parse_datatype, quantize_model
from .stream_sim import build_dataflow, run_stream

BRAM36_BITS = 36864
DEFAULT_EVAL_IMAGES = 1000
DEFAULT_CALIBRATION_IMAGES = 256
CSV_HEADER = ("datatype", "zero_weights_pct", "param_bits", "bram36", "latency_cycles",
              "interval_cycles", "accuracy_pct", "zero_mults_pct")
_PCT_COLUMNS = ("zero_weights_pct", "accuracy_pct", "zero_mults_pct")


@dataclass(frozen=True)
class ReportRow:
    datatype: str
    zero_weights_pct: float
    param_bits: int
    bram36: int
    latency_cycles: int
    interval_cycles: int
    accuracy_pct: float
    zero_mults_pct: float

    def cells(self) -> list[str]:
        return [f"{v:.2f}" if k in _PCT_COLUMNS else str(v) for k, v in asdict(self).items()]


@dataclass
class ExplorationReport:
    rows: list[ReportRow] = field(default_factory=list)
    model: str = ""
    eval_images: int = 0
    calibration_images: int = 0
    seed: int | None = None
    float_accuracy_pct: float | None = None

    def row(self, datatype: str) -> ReportRow:
        for r in self.rows:
            if r.datatype == datatype:
                return r
        raise KeyError(datatype)


def bram36(param_bits: int) -> int:
    return math.ceil(param_bits / BRAM36_BITS)


def sample_eval_indices(total: int, count: int, seed: int) -> np.ndarray:
    """Sorted seed-determined subset; the whole set when ``count >= total``."""
    if count >= total:
        return np.arange(total)
    return np.sort(np.random.default_rng(seed).choice(total, size=count, replace=False))


def accuracy_pct(predictions, labels) -> float:
    labels = np.asarray(labels)
    return 100.0 * float(np.mean(np.asarray(predictions) == labels)) if labels.size else 0.0


def float_accuracy(ir: ModelIR, images, labels, batch: int = 500) -> float:
    preds = [float_model.forward(ir, images[i:i + batch]).argmax(axis=1)
             for i in range(0, len(images), batch)]
    return accuracy_pct(np.concatenate(preds), labels)


def evaluate_datatype(ir: ModelIR, datatype: str, calib, images, labels) -> ReportRow:
    """One sweep point: every evaluation image streamed through the dataflow graph."""
    cfg = parse_datatype(datatype, calibration_images=len(calib))
    model = quantize_model(ir, cfg, calib, name=datatype)
    graph = build_dataflow(model)
    codes = [model.quantize_input(img) for img in images]
    outputs, metrics = run_stream(graph, codes)
    preds = [int(np.argmax(o)) for o in outputs]
    zero_mults = 100.0 * metrics.mult_zero_skippable / metrics.mult_total if metrics.mult_total else 0.0
    return ReportRow(
        datatype=cfg.label,
        zero_weights_pct=100.0 * model.zero_weight_fraction,
        param_bits=model.param_bits,
        bram36=bram36(model.param_bits),
        latency_cycles=metrics.latency_cycles,
        interval_cycles=metrics.interval_cycles,
        accuracy_pct=accuracy_pct(preds, labels),
        zero_mults_pct=zero_mults,
    )


def _point(args):
    ir, datatype, calib, images, labels = args
    try:
        return evaluate_datatype(ir, datatype, calib, images, labels)
    except FlowError as exc:
        raise type(exc)(f"datatype {datatype}: {exc}") from exc


def explore(ir: ModelIR, datatypes: list[str], calib, images, labels, *, seed: int | None = None,
            jobs: int = 1, name: str = "") -> ExplorationReport:
    """Evaluate every datatype; rows keep the requested order whatever ``jobs`` is."""
    images = np.asarray(images, dtype=np.float32)
    calib = np.asarray(calib, dtype=np.float32)
    if len(images) == 0:
        raise EmptyInput("evaluation set is empty")
    for dt in datatypes:
        parse_datatype(dt)  # reject malformed labels before any work starts
    tasks = [(ir, dt, calib, images, labels) for dt in datatypes]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            rows = list(pool.map(_point, tasks))
    else:
        rows = [_point(t) for t in tasks]
    return ExplorationReport(
        rows=rows, model=name or ir.source_name, eval_images=len(images),
        calibration_images=len(calib), seed=seed,
        float_accuracy_pct=float_accuracy(ir, images, labels),
    )


# ---------------------------------------------------------------------------
# rendering

def render_report(report: ExplorationReport, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in report.rows:
            writer.writerow(r.cells())
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = [
            f"Exploration of {report.model or 'model'}: {report.eval_images} evaluation images, "
            f"{report.calibration_images} calibration images, seed {report.seed}",
            "",
            "| " + " | ".join(CSV_HEADER) + " |",
            "|" + "|".join("---" for _ in CSV_HEADER) + "|",
        ]
        lines += ["| " + " | ".join(r.cells()) + " |" for r in report.rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _row_from_cells(cells: list[str]) -> ReportRow:
    values = dict(zip(CSV_HEADER, (c.strip() for c in cells)))
    return ReportRow(**{
        k: (v if k == "datatype" else float(v) if k in _PCT_COLUMNS else int(v))
        for k, v in values.items()
    })


def read_table(text: str) -> list[ReportRow]:
    """Rows back from either rendering (CSV or markdown table)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if any(ln.lstrip().startswith("|") for ln in lines):
        table = [ln.strip().strip("|").split("|") for ln in lines if ln.lstrip().startswith("|")]
        table = [[c.strip() for c in row] for row in table if not set("".join(row)) <= set("-: ")]
    else:
        table = list(csv.reader(lines))
    if not table or tuple(table[0]) != CSV_HEADER:
        raise ValueError("table header does not match the report columns")
    return [_row_from_cells(row) for row in table[1:]]


def plot_report(report: ExplorationReport, path) -> None:
    """Accuracy against weight bits, one line per activation width."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[int, list[tuple[int, float]]] = {}
    for r in report.rows:
        cfg = parse_datatype(r.datatype)
        series.setdefault(cfg.act_bits, []).append((cfg.weight_bits, r.accuracy_pct))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for act, points in sorted(series.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=f"D{act}")
    if report.float_accuracy_pct is not None:
        ax.axhline(report.float_accuracy_pct, color="grey", linestyle="--", label="float")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("weight bits")
    ax.set_ylabel("accuracy [%]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
