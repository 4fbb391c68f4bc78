import sys
from pathlib import Path

# helper modules live next to the tests and in tests/data
sys.path.insert(0, str(Path(__file__).parent / "data"))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
