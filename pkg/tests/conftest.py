"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run.

Tests tagged ``@pytest.mark.criterion("C1", "title")`` are collected here; the
``measured`` fixture lets a test attach the numbers it observed.
"""

import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.fixture
def measured(request):
    marker = request.node.get_closest_marker("criterion")
    key = marker.args[0] if marker else request.node.nodeid
    notes = _DETAILS.setdefault(key, [])
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    prev = _RESULTS.get(cid, (title, True))
    if rep.when == "call" or rep.failed:
        ok = prev[1] and rep.passed
        _RESULTS[cid] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[1:])):
        title, ok = _RESULTS[cid]
        line = f"{cid} {'PASS' if ok else 'FAIL'}  {title}"
        details = _DETAILS.get(cid)
        if details:
            line += "  [" + "; ".join(details) + "]"
        tr.write_line(line)
