"""Collects the acceptance verdicts and prints them after the test summary."""

ACCEPTANCE = []


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE.append((criterion, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
