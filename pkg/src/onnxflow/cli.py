"""Command line entry point: parse, quantize, simulate, compose, emit, explore.

Exit status 0 on success, 1 for usage errors, 2 when processing fails. Every
error prints one line ``<CODE>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, codegen, composer, explorer, mnist
from .codegen import write_atomic
from .errors import FlowError
from .layer_ir import build_ir, ir_to_json
from .onnx_ingest import encode_json_mirror, load_model
from .quantizer import ALLOWED_BITS, DATATYPE_RE, QuantizedModel, parse_datatype, quantize_model
from .stream_sim import build_dataflow, reference_inference, run_stream

USAGE_EXIT = 1
PROCESSING_EXIT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _datatype(text: str) -> str:
    m = DATATYPE_RE.fullmatch(text.strip())
    if not m or int(m.group(1)) not in ALLOWED_BITS or int(m.group(2)) not in ALLOWED_BITS:
        raise argparse.ArgumentTypeError(
            f"malformed datatype {text!r}: expected Dx-Wy with x, y in {ALLOWED_BITS}")
    return text.strip()


def _grid(text: str) -> list[str]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty datatype grid")
    return [_datatype(t) for t in items]


# ---------------------------------------------------------------------------
# shared helpers

def _mnist_root(args) -> Path:
    return Path(args.mnist) if args.mnist else mnist.default_root()


def _calibration(args) -> np.ndarray:
    train = mnist.load_split(_mnist_root(args), "train")
    return train.normalized(np.arange(min(args.calibration, len(train))))


def _load_ir(path):
    return build_ir(load_model(path))


def _quantized(args) -> QuantizedModel:
    """--quantized file, or --model quantized on the spot with --datatype."""
    if getattr(args, "quantized", None):
        return QuantizedModel.from_json(Path(args.quantized).read_text())
    if not args.model or not args.datatype:
        raise UsageError("give --quantized FILE, or --model FILE with --datatype Dx-Wy")
    ir = _load_ir(args.model)
    cfg = parse_datatype(args.datatype, args.calibration)
    return quantize_model(ir, cfg, _calibration(args), name=cfg.label)


def _write_or_print(text: str, out) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands

def cmd_parse(args) -> int:
    raw = load_model(args.model)
    ir = build_ir(raw)
    if args.dump_ir:
        write_atomic(args.dump_ir, ir_to_json(ir) + "\n")
    if args.dump_mirror:
        write_atomic(args.dump_mirror, encode_json_mirror(raw) + "\n")
    print(f"{raw.graph_name}: {len(raw.nodes)} nodes, opset {raw.opset_version}")
    for layer in ir.layers:
        print(f"  {layer.name:<10} {layer.kind:<15} {layer.input_shape} -> {layer.output_shape}")
    return 0


def cmd_quantize(args) -> int:
    if not args.out:
        raise UsageError("quantize needs --out")
    model = _quantized(args)
    write_atomic(args.out, model.to_json() + "\n")
    print(f"{model.config.label}: {model.param_bits} parameter bits, "
          f"{100 * model.zero_weight_fraction:.2f}% zero weights")
    return 0


def cmd_simulate(args) -> int:
    model = _quantized(args)
    graph = build_dataflow(model)
    test = mnist.load_split(_mnist_root(args), "test")
    idx = explorer.sample_eval_indices(len(test), args.images, args.seed)
    images = test.normalized(idx)
    codes = [model.quantize_input(img) for img in images]
    outputs, metrics = run_stream(graph, codes)
    preds = [int(np.argmax(o)) for o in outputs]
    result = {
        "datatype": model.config.label,
        "images": len(codes),
        "accuracy_pct": round(explorer.accuracy_pct(preds, test.labels[idx]), 4),
        "latency_cycles": metrics.latency_cycles,
        "interval_cycles": metrics.interval_cycles,
        "mult_total": metrics.mult_total,
        "mult_zero_skippable": metrics.mult_zero_skippable,
        "predictions": preds,
    }
    if args.check_reference:
        result["reference_matches"] = sum(
            bool(np.array_equal(out, reference_inference(model, c)))
            for out, c in zip(outputs, codes)
        )
    _write_or_print(json.dumps(result, indent=2) + "\n", args.out)
    return 0


def cmd_compose(args) -> int:
    if not args.quantized or len(args.quantized) < 1:
        raise UsageError("compose needs one or more --quantized files")
    graphs = []
    for i, path in enumerate(args.quantized):
        model = QuantizedModel.from_json(Path(path).read_text())
        graphs.append(build_dataflow(model, name=model.name or f"g{i}"))
    md, table = composer.merge(graphs)
    report = composer.sharing_report(md, graphs)
    if args.out:
        write_atomic(args.out, table.to_json() + "\n")
    if args.outdir:
        codegen.emit(md, None, args.outdir)
    print(f"{md.config_count} configurations, {md.actor_count} actors, "
          f"{len(md.switches)} routing actors")
    print(f"shared {report.shared_actor_count}, duplicated {report.duplicated_actor_count}, "
          f"shared weight bits {report.weight_bits_shared}")
    return 0


def cmd_emit(args) -> int:
    if not args.outdir:
        raise UsageError("emit needs --outdir")
    model = _quantized(args)
    graph = build_dataflow(model)
    bundle = codegen.emit(graph, model, args.outdir)
    print(f"wrote {len(bundle.files())} files to {args.outdir}")
    return 0


def cmd_explore(args) -> int:
    if not args.model or not args.grid:
        raise UsageError("explore needs --model and --grid")
    ir = _load_ir(args.model)
    root = _mnist_root(args)
    calib = _calibration(args)
    test = mnist.load_split(root, "test")
    idx = explorer.sample_eval_indices(len(test), args.eval_images, args.seed)
    report = explorer.explore(ir, args.grid, calib, test.normalized(idx), test.labels[idx],
                              seed=args.seed, jobs=args.jobs, name=Path(args.model).stem)
    _write_or_print(explorer.render_report(report, args.format), args.out)
    if args.plot:
        explorer.plot_report(report, args.plot)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, *, model=True, datatype=True, data=True) -> None:
    p.add_argument("--config", help="JSON file whose keys mirror the flags; flags win")
    if model:
        p.add_argument("--model", help="ONNX model or its JSON mirror")
    if datatype:
        p.add_argument("--datatype", type=_datatype, help="Dx-Wy, e.g. D16-W8")
    if data:
        p.add_argument("--mnist", help="directory with the four MNIST IDX files")
        p.add_argument("--calibration", type=int, default=explorer.DEFAULT_CALIBRATION_IMAGES,
                       help="training images used to calibrate activation ranges")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="onnxflow", description="ONNX to streaming dataflow accelerator flow")
    parser.add_argument("--version", action="version", version=f"onnxflow {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("parse", help="decode a model and print its layer chain")
    p.add_argument("model", help="ONNX model or its JSON mirror")
    p.add_argument("--config", help="JSON file whose keys mirror the flags; flags win")
    p.add_argument("--dump-ir", help="write the layer IR as JSON")
    p.add_argument("--dump-mirror", help="write the JSON mirror of the model")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("quantize", help="post-training quantization to a Dx-Wy datatype")
    _common(p)
    p.add_argument("--out", help="quantized model JSON")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("simulate", help="stream MNIST test images through the dataflow graph")
    _common(p)
    p.add_argument("--quantized", help="quantized model JSON (instead of --model/--datatype)")
    p.add_argument("--images", type=int, default=10, help="number of test images")
    p.add_argument("--seed", type=int, default=0, help="test-subset sampling seed")
    p.add_argument("--check-reference", action="store_true",
                   help="also compare every output with direct inference")
    p.add_argument("--out", help="metrics JSON (stdout when omitted)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compose", help="merge quantized models into one multi-dataflow")
    p.add_argument("--config", help="JSON file whose keys mirror the flags; flags win")
    p.add_argument("--quantized", nargs="+", help="quantized model JSON files, one per configuration")
    p.add_argument("--out", help="configuration table JSON")
    p.add_argument("--outdir", help="also emit the merged topology here")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("emit", help="write HLS sources, synthesis script and XDF topology")
    _common(p)
    p.add_argument("--quantized", help="quantized model JSON (instead of --model/--datatype)")
    p.add_argument("--outdir", help="emission root directory")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("explore", help="sweep datatypes and report cost and accuracy")
    _common(p, datatype=False)
    p.add_argument("--grid", type=_grid, help="comma separated datatypes, e.g. D16-W16,D16-W8")
    p.add_argument("--eval-images", type=int, default=explorer.DEFAULT_EVAL_IMAGES,
                   help="test images evaluated (10000 for the full set)")
    p.add_argument("--seed", type=int, default=0, help="test-subset sampling seed")
    p.add_argument("--jobs", type=int, default=1, help="datatypes evaluated in parallel")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--out", help="report file (stdout when omitted)")
    p.add_argument("--plot", help="accuracy vs weight bits chart (PNG/SVG/PDF)")
    p.set_defaults(func=cmd_explore)
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with the --config JSON as defaults so explicit flags keep priority."""
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        action = actions[dest]
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError("missing subcommand (parse, quantize, simulate, compose, emit, explore)")
        if getattr(args, "config", None):
            args = _apply_config(parser, argv, args)
        return args.func(args)
    except UsageError as exc:
        print(f"E_USAGE: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FlowError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return PROCESSING_EXIT
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return PROCESSING_EXIT
    except (ValueError, KeyError) as exc:
        print(f"E_INVALID_INPUT: {exc}", file=sys.stderr)
        return PROCESSING_EXIT


if __name__ == "__main__":
    sys.exit(main())
