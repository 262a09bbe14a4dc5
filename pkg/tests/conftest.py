import pytest

_VERDICTS = {}


@pytest.fixture
def criterion():
    """Record a pass/fail verdict for one acceptance criterion and return it."""

    def report(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[k] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
