"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_results = {}
_details = {}


@pytest.fixture
def detail(request):
    """Attach a short result summary to the current criterion's line."""
    def note(text):
        _details[request.node.name] = text
    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        _results[report.nodeid.split("::")[-1]] = report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in sorted(_results.items(), key=lambda kv: int(kv[0].split("_")[2])):
        extra = f"  ({_details[name]})" if name in _details else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}{extra}")
