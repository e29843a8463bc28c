from __future__ import annotations

import pytest

_criteria: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n, title = mark.args
        _criteria.setdefault(n, []).append((title, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        rows = _criteria[n]
        ok = all(outcome == "passed" for _, outcome in rows)
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {rows[0][0]}")
