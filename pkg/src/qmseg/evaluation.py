"""Otsu baseline, overlap metrics and mask structure statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from qmseg.imaging import BinaryMask, GrayImage


def _check_shapes(m: BinaryMask, m_hat: BinaryMask):
    if m.bits.shape != m_hat.bits.shape:
        raise ValueError(f"mask dimensions differ: {m.width}x{m.height} vs {m_hat.width}x{m_hat.height}")


def dice(m: BinaryMask, m_hat: BinaryMask) -> float:
    _check_shapes(m, m_hat)
    a, b = m.bits.astype(bool), m_hat.bits.astype(bool)
    total = int(a.sum() + b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(m: BinaryMask, m_hat: BinaryMask) -> float:
    _check_shapes(m, m_hat)
    a, b = m.bits.astype(bool), m_hat.bits.astype(bool)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def otsu_threshold(img: GrayImage, bins: int = 256) -> tuple[float, BinaryMask]:
    """Histogram Otsu threshold over [0, 1]; pixels strictly above it are foreground.

    Cells are right-closed, ((k-1)/bins, k/bins], so that the class split at
    boundary k/bins coincides with ``intensity > k/bins``. Ties resolve to the
    lowest boundary.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    values = img.flat
    if values.size == 0:
        raise ValueError("cannot threshold an empty image")
    if np.all(values == values[0]):
        return float(values[0]), BinaryMask.zeros(img.width, img.height)

    cell = np.clip(np.ceil(values * bins).astype(np.int64) - 1, 0, bins - 1)
    hist = np.bincount(cell, minlength=bins).astype(np.float64)
    sums = np.bincount(cell, weights=values, minlength=bins)
    total_n, total_s = hist.sum(), sums.sum()

    # split k puts cells [0, k) in the background, k = 1 .. bins-1
    n0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(sums)[:-1]
    n1 = total_n - n0
    valid = (n0 > 0) & (n1 > 0)
    mu0 = np.divide(s0, n0, out=np.zeros_like(s0), where=n0 > 0)
    mu1 = np.divide(total_s - s0, n1, out=np.zeros_like(s0), where=n1 > 0)
    between = np.where(valid, n0 * n1 * (mu0 - mu1) ** 2, -1.0)
    k = int(np.argmax(between)) + 1
    threshold = k / bins
    return threshold, BinaryMask((img.data > threshold).astype(np.uint8))


def connected_components(m: BinaryMask) -> int:
    """Number of 4-connected foreground components."""
    _, count = ndimage.label(m.bits, structure=ndimage.generate_binary_structure(2, 1))
    return int(count)


@dataclass
class SegmentationReport:
    dice: float | None
    iou: float | None
    predicted_area: int
    true_area: int | None
    intersection_area: int | None
    connected_components: int
    solver_name: str
    elapsed: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)


REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "dice",
        "iou",
        "predicted_area",
        "true_area",
        "intersection_area",
        "connected_components",
        "solver_name",
        "elapsed",
    ],
    "properties": {
        "dice": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "iou": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "predicted_area": {"type": "integer", "minimum": 0},
        "true_area": {"type": ["integer", "null"], "minimum": 0},
        "intersection_area": {"type": ["integer", "null"], "minimum": 0},
        "connected_components": {"type": "integer", "minimum": 0},
        "solver_name": {"type": "string"},
        "elapsed": {"type": "number", "minimum": 0},
    },
}


def segmentation_report(
    predicted: BinaryMask, truth: BinaryMask | None, solver_name: str, elapsed: float
) -> SegmentationReport:
    """Metrics fields are None when no ground truth is available."""
    if truth is None:
        d = j = true_area = inter = None
    else:
        _check_shapes(predicted, truth)
        d, j = dice(truth, predicted), iou(truth, predicted)
        true_area = truth.area
        inter = int((truth.bits & predicted.bits).sum())
    return SegmentationReport(
        dice=d,
        iou=j,
        predicted_area=predicted.area,
        true_area=true_area,
        intersection_area=inter,
        connected_components=connected_components(predicted),
        solver_name=solver_name,
        elapsed=elapsed,
    )
