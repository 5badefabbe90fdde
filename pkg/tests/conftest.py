"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_TITLES = {
    1: "speed estimation at 30 Hz",
    2: "speed formula on the analytic case",
    3: "swept-region soundness",
    4: "registration recovery",
    5: "priority sequencing",
    6: "timed execution",
    7: "end-to-end desk-scale runs",
    8: "grid determinism and runtime",
}
_owner = {}  # node id -> criterion
_status = {}  # criterion -> {node id: outcome}
_notes = {}  # criterion -> measurements worth showing next to the verdict


@pytest.fixture
def note(request):
    """``note(text)`` attaches a measurement to the test's criterion line."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        if mark is not None:
            _notes.setdefault(mark.args[0], []).append(text)
        print(text)

    return add


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _owner[item.nodeid] = mark.args[0]
            _status.setdefault(mark.args[0], {})[item.nodeid] = "notrun"


def pytest_runtest_logreport(report):
    n = _owner.get(report.nodeid)
    if n is None:
        return
    seen = _status[n]
    if report.failed:
        seen[report.nodeid] = "failed"
    elif report.skipped and seen[report.nodeid] != "failed":
        seen[report.nodeid] = "skipped"
    elif report.when == "call" and report.passed and seen[report.nodeid] == "notrun":
        seen[report.nodeid] = "passed"


def pytest_terminal_summary(terminalreporter):
    if not _status:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_status):
        outcomes = set(_status[n].values())
        if outcomes == {"passed"}:
            verdict = "PASS"
        elif "failed" in outcomes:
            verdict = "FAIL"
        else:
            verdict = "INCOMPLETE"
        extra = "; ".join(_notes.get(n, ()))
        line = f"criterion {n} ({_TITLES.get(n, '?')}): {verdict}"
        terminalreporter.write_line(line + (f"  [{extra}]" if extra else ""))
