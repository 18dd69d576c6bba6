import logging

import pytest

N_CRITERIA = 9
_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        _RESULTS[criterion] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k not in _RESULTS:
            terminalreporter.write_line(f"criterion {k}: NOT RUN")
            continue
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(autouse=True)
def _quiet_library_logs(caplog):
    caplog.set_level(logging.ERROR, logger="stefan_gt")
