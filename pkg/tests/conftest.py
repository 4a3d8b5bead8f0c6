"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import re

_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if m:
        _outcomes[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    import acceptance_report

    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        word = "PASS" if _outcomes[n] == "passed" else "FAIL"
        detail = acceptance_report.details.get(n, "")
        line = f"ACCEPTANCE {n}: {word}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
