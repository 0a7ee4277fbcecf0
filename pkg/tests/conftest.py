"""Shared fixtures and the per-criterion summary for the acceptance suite."""

from __future__ import annotations

import sys
from pathlib import Path


sys.path.insert(0, str(Path(__file__).resolve().parent))

_TITLES = {}
_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion this test belongs to")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            num, title = m.args
            _TITLES[item.nodeid] = (int(num), title)


def pytest_runtest_logreport(report):
    info = _TITLES.get(report.nodeid)
    if info is None:
        return
    num, title = info
    if report.when == "call" or report.outcome != "passed":
        ok = report.outcome == "passed" and not hasattr(report, "wasxfail")
        if hasattr(report, "wasxfail") and report.when == "call":
            ok = False
        prev = _RESULTS.get(num, (title, True, []))
        notes = prev[2] + ([report.nodeid.split("::")[-1]] if not ok else [])
        _RESULTS[num] = (prev[0] if num in _RESULTS else title, prev[1] and ok, notes)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_RESULTS):
        title, ok, failed = _RESULTS[num]
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if failed:
            line += f"  (failing part: {', '.join(failed)})"
        tr.write_line(line)
