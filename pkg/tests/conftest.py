import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(str(k).split()[0]), str(k))):
        terminalreporter.write_line(RESULTS[key])
