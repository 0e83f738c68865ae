import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# (criterion id, passed, detail) lines filled in by test_acceptance
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0][1:])):
        terminalreporter.write_line(f"{cid:<4} {'PASS' if ok else 'FAIL'}  {detail}")
