import pytest

RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance verdict; printed together at the end of the run."""

    def _record(name: str, ok: bool, detail: str) -> None:
        RESULTS[name] = (ok, detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS, key=lambda k: (len(k.split()[1]), k)):
        ok, detail = RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
