"""Acceptance bookkeeping: one pass/fail line per criterion at the end of the run."""

import time

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(tag): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"ok": True, "tests": 0, "seconds": 0.0, "details": []})
    # setup time includes shared study fixtures
    entry["seconds"] += rep.duration
    if rep.when == "setup" and rep.passed:
        return
    entry["tests"] += 1
    entry["ok"] &= rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for tag in sorted(_CRITERIA, key=lambda t: int(t[1:])):
        e = _CRITERIA[tag]
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["details"])
        tr.write_line(f"{tag:<4} {status}  ({e['tests']} tests, {e['seconds']:.0f} s)  {detail}".rstrip())


@pytest.fixture
def detail(request):
    """Attach a short string to the criterion's summary line."""

    def add(text):
        request.node.user_properties.append(("detail", text))

    return add


@pytest.fixture
def stopwatch():
    t0 = time.perf_counter()
    return lambda: time.perf_counter() - t0
