from __future__ import annotations

import pytest

# criterion number -> (title, passed, detail)
_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance-criterion outcome for the end-of-run report."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number}. {title}: {detail}")
