import pytest

_verdicts: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def verdicts():
    return _verdicts


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_verdicts):
        name, ok, detail = _verdicts[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {num}. {name}: {detail}")
