import pytest

_RESULTS = pytest.StashKey[dict]()
CRITERIA = range(1, 10)


@pytest.fixture
def criterion(request):
    """Record the PASS/FAIL line of one acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_RESULTS, {})[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        terminalreporter.write_line(results.get(n, f"criterion {n}: FAIL  (no result recorded)"))
