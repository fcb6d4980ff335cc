import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).parent))

# filled by test_acceptance.verdict; echoed after the run so the lines survive output capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
