"""Shared pytest plumbing.

The acceptance tests append one line per criterion to ACCEPTANCE_RESULTS;
the terminal-summary hook prints them after the run so every pass/fail
verdict is visible even when the tests succeed.
"""

ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
