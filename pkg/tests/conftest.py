"""Shared reporting for the acceptance suite.

Acceptance tests record their verdicts through the ``criterion`` fixture;
the lines are printed together at the end of the pytest run, followed by
the per-row table reproduction details.
"""

import pytest

_CRITERIA: dict = {}
_ROWS: list = []


class CriterionLog:
    """Collects named parts per criterion; a criterion passes when every part does."""

    def part(self, number: int, title: str, name: str, passed: bool, detail: str = "",
             expected_failure: bool = False):
        entry = _CRITERIA.setdefault(number, {"title": title, "parts": {}})
        entry["parts"][name] = (bool(passed), detail, expected_failure)

    def row(self, line: str):
        _ROWS.append(line)


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def _criterion_line(number, entry):
    parts = entry["parts"]
    ok = all(p[0] for p in parts.values())
    verdict = "PASS" if ok else "FAIL"
    if not ok and all(p[2] for p in parts.values() if not p[0]):
        verdict = "FAIL (expected)"
    bits = [f"{name}: {'ok' if p[0] else 'miss'}{' - ' + p[1] if p[1] else ''}"
            for name, p in parts.items()]
    return f"[{verdict}] criterion {number} {entry['title']} | " + "; ".join(bits)


def pytest_terminal_summary(terminalreporter):
    if _ROWS:
        terminalreporter.write_sep("=", "table reproduction (both top boundary conditions)")
        for line in _ROWS:
            terminalreporter.write_line(line)
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_criterion_line(number, _CRITERIA[number]))
