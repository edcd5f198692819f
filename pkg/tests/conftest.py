import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, ok, detail)``."""

    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
    passed = sum(ok for ok, _ in _CRITERIA.values())
    tr.write_line(f"{passed}/{len(_CRITERIA)} criteria passed")
