import sys
from pathlib import Path

import pytest

# the oracle helpers live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    A criterion whose test ends without recording anything (an exception
    before the check) is reported as FAIL.
    """
    store = request.config.stash[_VERDICTS]
    number = request.node.get_closest_marker("criterion").args[0]

    def emit(ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        store[number] = line
        return ok

    yield emit
    if number not in store:
        store[number] = f"FAIL criterion {number}: did not complete ({request.node.name})"


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash[_VERDICTS]
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
