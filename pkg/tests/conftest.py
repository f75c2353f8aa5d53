import numpy as np
import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[_LINES] = {}


@pytest.fixture
def criterion(request):
    """Record the one-line verdict of the acceptance criterion under test."""
    n = request.node.get_closest_marker("criterion").args[0]
    lines = request.config.stash[_LINES]

    def record(ok: bool, detail: str):
        lines[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    lines = item.config.stash[_LINES]
    n = mark.args[0]
    if rep.failed and (n not in lines or " PASS " in lines[n]):
        lines[n] = f"criterion {n:>2}: FAIL  {call.excinfo.typename}: {str(call.excinfo.value).splitlines()[0][:160]}"


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_LINES]
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
