import numpy as np
import pytest

from sscontagion.domain import Community, PVInstallation

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _ACCEPTANCE.get(number)
        # a criterion split over several tests passes only if all of them pass
        if prev is None or prev[1] == "PASS":
            _ACCEPTANCE[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}  {status}  {title}")


def square(side=100.0, origin=(0.0, 0.0)):
    x0, y0 = origin
    return np.array([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])


def make_community(xy, years, polygon=None, cid="c", panel_area=5.0):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    polygon = square() if polygon is None else polygon
    areas = np.full(len(xy), panel_area) if np.isscalar(panel_area) else panel_area
    return Community.from_arrays(cid, polygon, xy, years, areas)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_events():
    return (PVInstallation("a", (10.0, 10.0), 2012, 4.0),
            PVInstallation("b", (13.0, 14.0), 2015, 6.0))
