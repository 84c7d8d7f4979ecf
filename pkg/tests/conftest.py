import numpy as np
import pytest

from dognose.geometry import Boundary, CellClass, GridMask, Orientation
from dognose.scenarios import get_preset


def box_mask(nx=32, ny=32, h=1e-3, open_sides=(True, True, False, True), solid_rim=False,
             source_cells=()):
    """Plain rectangular domain with no sampler; optional one-cell solid rim."""
    cls = np.zeros((nx, ny), dtype=np.int8)
    ground = np.zeros((nx, ny), dtype=bool)
    sides = [Boundary.OPEN if o else Boundary.SOLID for o in open_sides]
    if solid_rim:
        ground[0, :] = ground[-1, :] = ground[:, 0] = ground[:, -1] = True
        cls[ground] = CellClass.SOLID
    return GridMask(cls=cls, jet=np.zeros((nx, ny, 2)), groups={}, ground=ground,
                    chamber=np.zeros((nx, ny), dtype=bool), h=h, boundaries=tuple(sides),
                    orientation=Orientation.FACE_DOWN, axis_index=nx // 2, tip_index=0,
                    back_row=0, source_cells=tuple(source_cells))


def small_spec(name="dognose_h5.08cm", duration=2.0):
    """A cheap variant of a preset: coarse grid, nearby source, short run."""
    spec = get_preset(name)
    return (spec.replace("domain.cell_size", 0.25 / 64)
                .replace("source.offset", 0.03)
                .replace("duration", duration)
                .replace("motor_off_time", duration * 0.75))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    prev = _criteria.get(key)
    if report.when == "call" or report.failed or report.skipped:
        if prev is None or prev[0] == "PASS":
            outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
            _criteria[key] = (outcome, props.get("title", ""), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        outcome, title, detail = _criteria[key]
        line = f"criterion {key:>2} {outcome:<4} {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))
            item.user_properties.append(("title", mark.args[1]))
