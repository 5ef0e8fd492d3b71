import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion verdicts collected by test_acceptance.report, echoed after the run
VERDICTS: list = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
