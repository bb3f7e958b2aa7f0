"""Shared pytest wiring.

Collects the results of the acceptance tests and prints one pass/fail line
per criterion at the end of the run, so the gate is readable even when the
individual test output is folded away.
"""

from __future__ import annotations

import re

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or report.when != "call":
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m:
        _acceptance[m.group(1)] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_acceptance):
        terminalreporter.write_line(f"criterion {num}: {_acceptance[num]}")
