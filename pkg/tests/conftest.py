import numpy as np
import pytest
from hypothesis import settings

from stochnls.field import Grid1D

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["dirichlet", "periodic"])
def small_grid(request):
    return Grid1D(4.0, 64, request.param)


def random_values(grid, rng, scale=1.0):
    v = scale * (rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points))
    return grid.enforce_bc(v)


# Acceptance bookkeeping: tests marked ``criterion(id, title)`` are folded into
# one PASS/FAIL line per criterion in the terminal summary.
_CRITERIA: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not report.failed):
        return
    cid, title = mark.args
    entry = _CRITERIA.setdefault(cid, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= report.passed
    for key, value in item.user_properties:
        if key == "detail":
            entry["notes"].append(value)
    if report.failed:
        entry["notes"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c)):
        e = _CRITERIA[cid]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {cid} {status}  {e['title']}")
        for note in dict.fromkeys(e["notes"]):
            terminalreporter.write_line(f"    {note}")
