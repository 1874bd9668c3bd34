"""End-to-end runs behind the CLI: configuration, segmentation, alpha sweeps, benchmarks."""

from __future__ import annotations

import dataclasses
import json
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qmseg.annealing import SaConfig, SolverOutcome, import_samples, solve_exact, solve_sa
from qmseg.evaluation import SegmentationReport, otsu_threshold, segmentation_report
from qmseg.graph_qubo import PixelGraph, QuboProblem, build_graph, build_qubo, energy, qubo_document
from qmseg.imaging import BinaryMask, GrayImage, resize_area, resize_mask_majority
from qmseg.qfilter import FilterConfig, apply_filter, omega_levels
from qmseg.vqa import VqaConfig, solve_vqa, warm_start_bits

SOLVERS = ("exact", "sa", "vqa", "otsu", "external")
DEFAULT_SWEEP = (0.0, 0.1, 1.0, 10.0, 100.0)


class PipelineError(RuntimeError):
    """Runtime failure inside a pipeline stage."""


class ConfigError(ValueError):
    """Invalid configuration or input combination."""


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = field(default_factory=FilterConfig)
    alpha: float = 0.1
    bandwidth_factor: float = 0.5
    solver: str = "vqa"
    sa: SaConfig = field(default_factory=SaConfig)
    vqa: VqaConfig = field(default_factory=VqaConfig)
    resize_to: tuple[int, int] | None = (42, 42)
    output: str = "."
    seed: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not self.bandwidth_factor > 0:
            raise ConfigError("bandwidth_factor must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def component_seeds(self) -> dict[str, int]:
        """Per-component seeds split from the root seed."""
        children = np.random.SeedSequence(self.seed).spawn(2)
        sa, vqa = (int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)
        return {"sa": sa, "vqa": vqa}

    def seeded(self) -> "PipelineConfig":
        seeds = self.component_seeds()
        return dataclasses.replace(
            self,
            sa=dataclasses.replace(self.sa, seed=seeds["sa"]),
            vqa=dataclasses.replace(self.vqa, seed=seeds["vqa"]),
        )


# ------------------------------------------------------------------ config I/O

_SECTIONS = {"filter": FilterConfig, "sa": SaConfig, "vqa": VqaConfig}


def _coerce(value: str, target):
    if isinstance(target, bool):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        size = int(w), int(h)
    except ValueError:
        raise ConfigError(f"size must look like WxH, got {text!r}") from None
    if min(size) < 1:
        raise ConfigError(f"size must be positive, got {text!r}")
    return size


def read_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines (dotted keys for sub-configs) or a JSON object."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
        flat = {}
        for key, value in doc.items():
            if isinstance(value, dict):
                flat.update({f"{key}.{k}": str(v) for k, v in value.items()})
            else:
                flat[key] = "none" if value is None else str(value)
        return flat
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    return entries


def build_config(overrides: dict[str, str], base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply string overrides keyed by PipelineConfig field names ('sa.reads', 'alpha', ...)."""
    try:
        return _apply_overrides(overrides, base or PipelineConfig())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _apply_overrides(overrides: dict[str, str], config: PipelineConfig) -> PipelineConfig:
    sections = {name: {} for name in _SECTIONS}
    top = {}
    for key, value in overrides.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            current = getattr(config, section)
            if name not in {f.name for f in dataclasses.fields(current)}:
                raise ConfigError(f"unknown config key {key!r}")
            sections[section][name] = _coerce(value, getattr(current, name))
        elif key == "resize_to":
            top[key] = None if value.strip().lower() in ("none", "") else parse_size(value)
        elif key in ("alpha", "bandwidth_factor"):
            top[key] = float(value)
        elif key == "seed":
            top[key] = int(value)
        elif key in ("solver", "output"):
            top[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for section, values in sections.items():
        if values:
            top[section] = dataclasses.replace(getattr(config, section), **values)
    return dataclasses.replace(config, **top)


# ---------------------------------------------------------------- file output


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------- segmentation


@dataclass
class SegmentationRun:
    image: GrayImage
    filtered: GrayImage
    omegas: np.ndarray
    graph: PixelGraph
    problem: QuboProblem
    mask: BinaryMask | None
    truth: BinaryMask | None
    outcome: SolverOutcome | None
    report: SegmentationReport | None
    awaiting_samples: bool = False


def prepare(image: GrayImage, config: PipelineConfig):
    if not config.filter.normalize_output:
        raise ConfigError("the segmentation pipeline needs the normalized filter output")
    if config.resize_to is not None:
        w, h = config.resize_to
        if (w, h) != (image.width, image.height):
            if w > image.width or h > image.height:
                raise ConfigError(f"cannot resize {image.width}x{image.height} up to {w}x{h}")
            image = resize_area(image, w, h)
    filtered = apply_filter(image, config.filter)
    omegas = omega_levels(image, config.filter)
    graph = build_graph(filtered, config.bandwidth_factor)
    problem = build_qubo(graph, config.alpha)
    return image, filtered, omegas, graph, problem


def match_truth(truth: BinaryMask, image: GrayImage) -> BinaryMask:
    if (truth.width, truth.height) == (image.width, image.height):
        return truth
    if truth.width < image.width or truth.height < image.height:
        raise ConfigError(
            f"ground truth {truth.width}x{truth.height} does not match image {image.width}x{image.height}"
        )
    return resize_mask_majority(truth, image.width, image.height)


def assignment_to_mask(x: np.ndarray, width: int, height: int) -> BinaryMask:
    """Segmentation mask A is the set of pixels with x_i = 0; x_i = 1 marks its complement."""
    return BinaryMask((1 - np.asarray(x, dtype=np.uint8)).reshape(height, width))


def segment(
    image: GrayImage,
    config: PipelineConfig,
    truth: BinaryMask | None = None,
    export_path=None,
    samples_path=None,
) -> SegmentationRun:
    """Resize, filter, build the QUBO and solve it with the configured solver."""
    config = config.seeded()
    image, filtered, omegas, graph, problem = prepare(image, config)
    if truth is not None:
        truth = match_truth(truth, image)
    w, h = image.width, image.height

    outcome: SolverOutcome | None
    if config.solver == "otsu":
        start = time.perf_counter()
        _, mask = otsu_threshold(image)
        elapsed = time.perf_counter() - start
        x = 1 - mask.flat
        e = energy(problem, x)
        outcome = SolverOutcome(x, e, [e], elapsed, "otsu")
    elif config.solver == "exact":
        if problem.n > 26:
            raise ConfigError(f"exact solver needs at most 26 pixels, image has {problem.n}; use --resize")
        outcome = solve_exact(problem)
    elif config.solver == "sa":
        outcome = solve_sa(problem, config.sa)
    elif config.solver == "vqa":
        seed_bits = warm_start_bits(filtered, config.vqa.threshold)
        try:
            outcome = solve_vqa(problem, seed_bits, config.vqa)
        except RuntimeError as exc:
            raise PipelineError(f"VQA training failed: {exc}") from exc
    else:
        if samples_path is None:
            if export_path is None:
                raise ConfigError("external solver needs an export path")
            atomic_write(export_path, qubo_document(problem, export_path))
            return SegmentationRun(image, filtered, omegas, graph, problem, None, truth, None, None, True)
        try:
            outcome = import_samples(problem, samples_path)
        except ValueError as exc:
            raise PipelineError(str(exc)) from exc

    mask = assignment_to_mask(outcome.best, w, h)
    report = segmentation_report(mask, truth, outcome.solver_name, outcome.elapsed)
    return SegmentationRun(image, filtered, omegas, graph, problem, mask, truth, outcome, report)


def sweep_alpha(image: GrayImage, truth: BinaryMask, values, config: PipelineConfig) -> list[dict]:
    """One SA segmentation per alpha value; rows carry alpha, dice, iou, energy, elapsed_ms."""
    values = list(values)
    if not values:
        raise ConfigError("need at least one alpha value")
    rows = []
    for alpha in values:
        run = segment(image, dataclasses.replace(config, alpha=float(alpha), solver="sa"), truth)
        rows.append(
            {
                "alpha": float(alpha),
                "dice": run.report.dice,
                "iou": run.report.iou,
                "energy": run.outcome.best_energy,
                "elapsed_ms": run.outcome.elapsed * 1e3,
            }
        )
    return rows


def benchmark(images: list[tuple[str, GrayImage, BinaryMask | None]], solvers, config: PipelineConfig):
    """Run every solver on every image; returns (per-run rows, per-solver timing summary)."""
    runs = []
    for name, image, truth in images:
        for solver in solvers:
            if solver == "external":
                raise ConfigError("benchmark does not run the external sampler")
            run = segment(image, dataclasses.replace(config, solver=solver), truth)
            runs.append(
                {
                    "image": name,
                    "solver_name": solver,
                    "elapsed_ms": run.outcome.elapsed * 1e3,
                    "energy": run.outcome.best_energy,
                    "dice": run.report.dice,
                    "iou": run.report.iou,
                    "connected_components": run.report.connected_components,
                }
            )
    summary = []
    for solver in solvers:
        times = [r["elapsed_ms"] for r in runs if r["solver_name"] == solver]
        dices = [r["dice"] for r in runs if r["solver_name"] == solver and r["dice"] is not None]
        ious = [r["iou"] for r in runs if r["solver_name"] == solver and r["iou"] is not None]
        summary.append(
            {
                "solver_name": solver,
                "runs": len(times),
                "mean_ms": statistics.fmean(times),
                "std_ms": statistics.pstdev(times),
                "min_ms": min(times),
                "max_ms": max(times),
                "mean_dice": statistics.fmean(dices) if dices else None,
                "mean_iou": statistics.fmean(ious) if ious else None,
            }
        )
    return runs, summary


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    lines = [",".join(columns)]
    lines += [",".join(fmt(row[c]) for c in columns) for row in rows]
    return "\n".join(lines) + "\n"
