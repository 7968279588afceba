"""Shared pytest plumbing: surface acceptance [PASS]/[FAIL] lines in the summary."""

acceptance_lines = []


def record(line: str):
    acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
