"""Shared pytest plumbing: collects the acceptance criterion verdict lines.

test_acceptance.py records one line per criterion; printing them from a
terminal-summary hook keeps them visible under normal output capture.
"""

import re

_LINES = []


def record_acceptance(line: str) -> None:
    _LINES.append(line)


def _criterion_number(line: str) -> int:
    m = re.search(r"criterion (\d+)", line)
    return int(m.group(1)) if m else 99


def pytest_terminal_summary(terminalreporter):
    seen = {_criterion_number(line) for line in _LINES}
    for rep in terminalreporter.stats.get("failed", []):
        m = re.search(r"test_criterion_(\d+)", rep.nodeid)
        if m and int(m.group(1)) not in seen:
            _LINES.append(f"criterion {m.group(1)}: FAIL ({rep.nodeid})")
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=_criterion_number):
        terminalreporter.write_line(line)
