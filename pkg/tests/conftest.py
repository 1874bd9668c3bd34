import json

import numpy as np
import pytest

from qmseg.imaging import GrayImage, Lesion, PhantomSpec, generate_phantom


@pytest.fixture
def disc_phantom():
    spec = PhantomSpec(42, 42, (Lesion(21, 21, 5, 0.9),), background=0.1, noise=0.0, seed=7)
    return generate_phantom(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def random_image(rng, width, height):
    return GrayImage(rng.random((height, width)))


# Wall-clock fields; everything else in an artifact must be byte-stable.
TIMING_KEYS = {"elapsed", "elapsed_ms", "mean_ms", "std_ms", "min_ms", "max_ms"}
TIMING_FILES = {"timing.png"}


def _strip_timing(value):
    if isinstance(value, dict):
        return {k: (None if k in TIMING_KEYS else _strip_timing(v)) for k, v in value.items()}
    if isinstance(value, list):
        return [_strip_timing(v) for v in value]
    return value


def normalized_artifact(path):
    """File bytes, with timing fields blanked in JSON and CSV outputs."""
    data = path.read_bytes()
    if path.suffix == ".json":
        return json.dumps(_strip_timing(json.loads(data)), sort_keys=True).encode()
    if path.suffix == ".csv":
        lines = data.decode().splitlines()
        header = lines[0].split(",")
        drop = {k for k, name in enumerate(header) if name in TIMING_KEYS}
        return "\n".join(
            ",".join("" if k in drop else cell for k, cell in enumerate(line.split(","))) for line in lines
        ).encode()
    return data


def snapshot(directory):
    """Map relative path -> normalized bytes for every artifact except timing plots."""
    return {
        str(p.relative_to(directory)): normalized_artifact(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name not in TIMING_FILES
    }


# ------------------------------------------------------------ acceptance report

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
