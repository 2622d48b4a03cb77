"""Shared pytest configuration: per-criterion PASS/FAIL lines for the acceptance suite."""

from collections import defaultdict

import pytest

# criterion number -> {"title": str, "ok": bool, "details": [str]}
_results = defaultdict(lambda: {"title": "", "ok": True, "details": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def record(request):
    """Attach a measured value to the criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _results[marker.args[0]]["details"].append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed):
        return
    entry = _results[marker.args[0]]
    entry["title"] = marker.args[1]
    entry["ok"] = entry["ok"] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        line = f"criterion {number} {'PASS' if entry['ok'] else 'FAIL'}: {entry['title']}"
        if entry["details"]:
            line += " [" + "; ".join(entry["details"]) + "]"
        terminalreporter.write_line(line)
