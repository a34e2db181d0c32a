import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# verdict lines from the acceptance tests, repeated in the terminal summary
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
