"""qmseg command line: filter, segment, sweep-alpha, benchmark, phantom.

Exit codes: 0 success, 1 runtime failure, 2 usage or specification error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from qmseg import plotting
from qmseg.annealing import SampleIntegrityError, SolverSizeError
from qmseg.graph_qubo import QuboParseError, build_graph
from qmseg.imaging import (
    Lesion,
    PgmFormatError,
    PhantomSpec,
    PhantomSpecError,
    UnsupportedOperation,
    generate_phantom,
    load_mask_pgm,
    load_pgm,
    save_mask_pgm,
    save_pgm,
)
from qmseg.pipeline import (
    DEFAULT_SWEEP,
    SOLVERS,
    ConfigError,
    PipelineConfig,
    PipelineError,
    atomic_write,
    benchmark,
    build_config,
    parse_size,
    read_config_file,
    rows_to_csv,
    segment,
    sweep_alpha,
)
from qmseg.qfilter import apply_filter, omega_levels
from qmseg.vqa import loss_history_csv

# flag destination -> PipelineConfig key
CONFIG_FLAGS = {
    "alpha": "alpha",
    "bandwidth_factor": "bandwidth_factor",
    "solver": "solver",
    "resize": "resize_to",
    "seed": "seed",
    "out_dir": "output",
    "mu": "filter.mu",
    "levels": "filter.levels",
    "percentile": "filter.percentile",
    "sa_reads": "sa.reads",
    "sa_sweeps": "sa.sweeps",
    "beta_start": "sa.beta_start",
    "beta_end": "sa.beta_end",
    "vqa_layers": "vqa.layers",
    "vqa_threshold": "vqa.threshold",
    "vqa_lr": "vqa.learning_rate",
    "vqa_epochs": "vqa.epochs",
}


class UsageError(Exception):
    pass


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"cannot read input file: {path}")
    return p.read_bytes()


def _config(args) -> PipelineConfig:
    overrides: dict[str, str] = {}
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"cannot read config file: {args.config}")
        overrides.update(read_config_file(args.config))
    for dest, key in CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = str(value)
    return build_config(overrides)


def _add_filter_flags(p):
    p.add_argument("--mu", type=float, help="sigmoid steepness (default 0.4)")
    p.add_argument("--levels", type=int, help="gray-level classes L (default 8)")
    p.add_argument("--percentile", type=float, help="quantile for the second level (default 0.9)")


def _add_pipeline_flags(p, solver=True):
    p.add_argument("--config", help="key = value (or JSON) file with PipelineConfig fields")
    p.add_argument("--out-dir", help="output directory (default: current directory)")
    if solver:
        p.add_argument("--solver", choices=SOLVERS, help="default vqa")
    p.add_argument("--alpha", type=float, help="smoothness weight (default 0.1)")
    p.add_argument("--bandwidth-factor", type=float, help="similarity bandwidth as a multiple of std(z) (default 0.5)")
    p.add_argument("--resize", help="downsample to WxH before filtering, or 'none' (default 42x42)")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    _add_filter_flags(p)
    p.add_argument("--sa-reads", type=int)
    p.add_argument("--sa-sweeps", type=int)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--vqa-layers", type=int)
    p.add_argument("--vqa-threshold", type=float)
    p.add_argument("--vqa-lr", type=float)
    p.add_argument("--vqa-epochs", type=int)
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="apply the quantum-inspired transform to a PGM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--config")
    _add_filter_flags(p)
    p.add_argument("--bandwidth-factor", type=float)
    p.add_argument("--maxval", type=int, choices=(255, 65535), default=255)

    p = sub.add_parser("segment", help="segment one image")
    p.add_argument("input")
    p.add_argument("--truth", help="ground-truth mask PGM")
    p.add_argument("--import-samples", help="complete an external-solver run from a sample file")
    _add_pipeline_flags(p)

    p = sub.add_parser("sweep-alpha", help="simulated-annealing segmentation over several alpha values")
    p.add_argument("input")
    p.add_argument("--truth", required=True)
    p.add_argument("--values", type=float, nargs="+", default=list(DEFAULT_SWEEP))
    _add_pipeline_flags(p, solver=False)

    p = sub.add_parser("benchmark", help="time several solvers on several images")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--truth", nargs="+", help="ground-truth masks, one per input")
    p.add_argument("--solvers", default="otsu,sa,vqa", help="comma-separated solver names")
    _add_pipeline_flags(p, solver=False)

    p = sub.add_parser("phantom", help="write a synthetic phantom and its ground-truth mask")
    p.add_argument("output", help="output directory")
    p.add_argument("--size", default="42x42")
    p.add_argument("--lesion", action="append", default=[], help="cx,cy,radius,intensity (repeatable)")
    p.add_argument("--background", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="phantom")
    return parser


# ------------------------------------------------------------------- commands


def cmd_filter(args) -> int:
    img = load_pgm(_read_bytes(args.input))
    cfg = _config(args)
    filtered = apply_filter(img, cfg.filter)
    omegas = omega_levels(img, cfg.filter)
    sigma_hat = build_graph(filtered, cfg.bandwidth_factor).sigma_hat
    print("omega: " + " ".join(f"{w:.6f}" for w in omegas), file=sys.stderr)
    print(f"sigma_hat: {sigma_hat:.6g} (std(z) = {np.std(filtered.flat):.6g})", file=sys.stderr)
    atomic_write(args.output, save_pgm(filtered, args.maxval))
    return 0


def _load_truth(path):
    return None if path is None else load_mask_pgm(_read_bytes(path))


def cmd_segment(args) -> int:
    config = _config(args)
    out = Path(config.output)
    image = load_pgm(_read_bytes(args.input))
    truth = _load_truth(args.truth)
    samples = args.import_samples
    if samples is not None:
        if config.solver != "external":
            raise UsageError("--import-samples requires --solver external")
        if not Path(samples).is_file():
            raise UsageError(f"cannot read sample file: {samples}")
    run = segment(image, config, truth, export_path=out / "problem.qubo", samples_path=samples)
    atomic_write(out / "filtered.pgm", save_pgm(run.filtered))
    if run.awaiting_samples:
        print(
            f"wrote {out / 'problem.qubo'}; rerun with --import-samples <file> once samples are available",
            file=sys.stderr,
        )
        return 0
    atomic_write(out / "mask.pgm", save_mask_pgm(run.mask))
    atomic_write(out / "report.json", run.report.to_json() + "\n")
    atomic_write(out / "solution.json", json.dumps(run.outcome.summary() | {"n": run.problem.n}, indent=2, default=_jsonable) + "\n")
    if "loss_history" in run.outcome.metadata:
        atomic_write(out / "loss_history.csv", loss_history_csv(run.outcome.metadata["loss_history"]))
    if not args.no_figures:
        atomic_write(
            out / "segment.png",
            plotting.segmentation_figure(run.image, run.filtered, run.mask, run.truth, run.outcome.solver_name),
        )
        if "loss_history" in run.outcome.metadata:
            atomic_write(out / "loss_history.png", plotting.loss_figure(run.outcome.metadata["loss_history"]))
    print(f"{run.outcome.solver_name}: energy {run.outcome.best_energy:.6g}", file=sys.stderr)
    return 0


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def cmd_sweep_alpha(args) -> int:
    config = _config(args)
    out = Path(config.output)
    image = load_pgm(_read_bytes(args.input))
    truth = _load_truth(args.truth)
    rows = sweep_alpha(image, truth, args.values, config)
    atomic_write(out / "sweep_alpha.csv", rows_to_csv(rows, ["alpha", "dice", "iou", "energy", "elapsed_ms"]))
    if not args.no_figures:
        atomic_write(out / "sweep_alpha.png", plotting.sweep_figure(rows))
    return 0


def cmd_benchmark(args) -> int:
    config = _config(args)
    out = Path(config.output)
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = [s for s in solvers if s not in SOLVERS or s == "external"]
    if not solvers or unknown:
        raise UsageError(f"invalid solver list {args.solvers!r}")
    truths = args.truth or []
    if truths and len(truths) != len(args.inputs):
        raise UsageError("--truth needs exactly one mask per input image")
    images = []
    for k, path in enumerate(args.inputs):
        truth = _load_truth(truths[k]) if truths else None
        images.append((Path(path).name, load_pgm(_read_bytes(path)), truth))
    runs, summary = benchmark(images, solvers, config)
    atomic_write(
        out / "benchmark_runs.csv",
        rows_to_csv(runs, ["image", "solver_name", "elapsed_ms", "energy", "dice", "iou", "connected_components"]),
    )
    atomic_write(
        out / "benchmark_summary.csv",
        rows_to_csv(summary, ["solver_name", "runs", "mean_ms", "std_ms", "min_ms", "max_ms", "mean_dice", "mean_iou"]),
    )
    atomic_write(out / "benchmark.json", json.dumps({"runs": runs, "summary": summary}, indent=2) + "\n")
    if not args.no_figures:
        atomic_write(out / "timing.png", plotting.timing_figure(summary))
    return 0


def _parse_lesion(text: str) -> Lesion:
    parts = text.split(",")
    if len(parts) != 4:
        raise PhantomSpecError(f"lesion must be cx,cy,radius,intensity, got {text!r}")
    try:
        return Lesion(int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]))
    except ValueError:
        raise PhantomSpecError(f"unparseable lesion {text!r}") from None


def cmd_phantom(args) -> int:
    width, height = parse_size(args.size)
    spec = PhantomSpec(
        width=width,
        height=height,
        lesions=tuple(_parse_lesion(t) for t in args.lesion),
        background=args.background,
        noise=args.noise,
        seed=args.seed,
    )
    image, mask = generate_phantom(spec)
    out = Path(args.output)
    atomic_write(out / f"{args.prefix}.pgm", save_pgm(image))
    atomic_write(out / f"{args.prefix}_truth.pgm", save_mask_pgm(mask))
    return 0


COMMANDS = {
    "filter": cmd_filter,
    "segment": cmd_segment,
    "sweep-alpha": cmd_sweep_alpha,
    "benchmark": cmd_benchmark,
    "phantom": cmd_phantom,
}

USAGE_ERRORS = (
    UsageError,
    ConfigError,
    PhantomSpecError,
    PgmFormatError,
    QuboParseError,
    UnsupportedOperation,
    SolverSizeError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        print(f"qmseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, SampleIntegrityError, OSError, RuntimeError, ValueError) as exc:
        print(f"qmseg {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
