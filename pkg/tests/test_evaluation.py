import json
from collections import deque

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmseg.evaluation import (
    REPORT_SCHEMA,
    connected_components,
    dice,
    iou,
    otsu_threshold,
    segmentation_report,
)
from qmseg.imaging import BinaryMask, GrayImage, disc_mask


def masks(shape=(4, 5)):
    return st.lists(st.integers(0, 1), min_size=shape[0] * shape[1], max_size=shape[0] * shape[1]).map(
        lambda bits: BinaryMask(np.array(bits, dtype=np.uint8).reshape(shape))
    )


def exhaustive_otsu_partition(values):
    """Best split of the sorted distinct values by within-class variance (lowest cut wins ties)."""
    levels = np.unique(values)
    best = None
    for cut in levels[:-1]:
        lo, hi = values[values <= cut], values[values > cut]
        within = lo.size * lo.var() + hi.size * hi.var()
        if best is None or within < best[0] - 1e-12:
            best = (within, cut)
    return values > best[1]


def flood_fill_count(bits):
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    count = 0
    for y in range(h):
        for x in range(w):
            if bits[y, x] and not seen[y, x]:
                count += 1
                queue = deque([(y, x)])
                seen[y, x] = True
                while queue:
                    cy, cx = queue.popleft()
                    for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
    return count


def test_dice_iou_examples():
    a = BinaryMask(np.array([[1, 1, 0, 0]]))
    b = BinaryMask(np.array([[0, 1, 1, 0]]))
    assert dice(a, b) == pytest.approx(0.5)
    assert iou(a, b) == pytest.approx(1 / 3)
    assert dice(a, a) == 1.0 and iou(a, a) == 1.0
    empty = BinaryMask.zeros(4, 1)
    assert dice(empty, empty) == 1.0 and iou(empty, empty) == 1.0
    assert dice(a, empty) == 0.0 and iou(a, empty) == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        dice(BinaryMask.zeros(2, 2), BinaryMask.zeros(3, 2))
    with pytest.raises(ValueError):
        iou(BinaryMask.zeros(2, 2), BinaryMask.zeros(2, 3))


@settings(max_examples=200, deadline=None)
@given(masks(), masks())
def test_metric_identities(a, b):
    d, j = dice(a, b), iou(a, b)
    assert d == dice(b, a) and j == iou(b, a)
    assert 0 <= j <= d <= 1
    if (a.bits | b.bits).any():
        assert abs(d - 2 * j / (1 + j)) <= 1e-12


def test_otsu_two_groups():
    values = np.array([0.1] * 5 + [0.9] * 5).reshape(2, 5)
    t, m = otsu_threshold(GrayImage(values))
    assert 0.1 <= t < 0.9
    truth = BinaryMask((values > 0.5).astype(np.uint8))
    assert dice(truth, m) == 1.0


def test_otsu_binary_image():
    values = np.array([[0.0, 1.0], [1.0, 0.0]])
    _, m = otsu_threshold(GrayImage(values))
    np.testing.assert_array_equal(m.bits, values.astype(np.uint8))


def test_otsu_constant_image():
    t, m = otsu_threshold(GrayImage(np.full((3, 3), 0.4)))
    assert t == 0.4 and m.area == 0


def test_otsu_matches_exhaustive_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        # one value per histogram cell centre keeps the binned and raw problems identical
        cells = rng.choice(256, size=rng.integers(3, 40), replace=True)
        values = ((cells + 0.5) / 256).reshape(1, -1)
        if np.unique(values).size < 2:
            continue
        _, m = otsu_threshold(GrayImage(values))
        np.testing.assert_array_equal(m.bits.astype(bool), exhaustive_otsu_partition(values))


def test_otsu_shift_monotone():
    rng = np.random.default_rng(6)
    base = np.concatenate([rng.uniform(0.05, 0.25, 30), rng.uniform(0.55, 0.7, 30)]).reshape(6, 10)
    t0, m0 = otsu_threshold(GrayImage(base))
    t1, m1 = otsu_threshold(GrayImage(base + 0.2))
    assert t1 >= t0
    np.testing.assert_array_equal(m0.bits, m1.bits)
    t_same, m_same = otsu_threshold(GrayImage(base * 1.0))
    assert t_same == t0 and np.array_equal(m_same.bits, m0.bits)


def test_components_examples():
    assert connected_components(BinaryMask.zeros(5, 5)) == 0
    assert connected_components(BinaryMask(disc_mask(21, 21, 10, 10, 5).astype(np.uint8))) == 1
    assert connected_components(BinaryMask(np.array([[1, 0], [0, 1]]))) == 2


@settings(max_examples=100, deadline=None)
@given(masks((6, 7)))
def test_components_match_flood_fill(m):
    assert connected_components(m) == flood_fill_count(m.bits)


def test_report_fields_and_schema():
    truth = BinaryMask(np.array([[1, 1, 0], [0, 0, 0]]))
    pred = BinaryMask(np.array([[0, 1, 1], [0, 0, 1]]))
    report = segmentation_report(pred, truth, "otsu", 0.25)
    assert report.predicted_area == 3 and report.true_area == 2 and report.intersection_area == 1
    assert report.dice == pytest.approx(0.4) and report.iou == pytest.approx(0.25)
    assert report.connected_components == 1
    doc = json.loads(report.to_json())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert list(doc) == [
        "dice", "iou", "predicted_area", "true_area", "intersection_area",
        "connected_components", "solver_name", "elapsed",
    ]


def test_report_without_truth():
    report = segmentation_report(BinaryMask(np.array([[1, 0, 1]])), None, "sa", 1.0)
    doc = json.loads(report.to_json())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["dice"] is None and doc["true_area"] is None
    assert doc["connected_components"] == 2


def test_schema_rejects_extra_field():
    doc = json.loads(segmentation_report(BinaryMask.zeros(2, 2), None, "sa", 0.0).to_json())
    doc["energy"] = 1.0
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, REPORT_SCHEMA)
