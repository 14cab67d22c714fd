import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the running acceptance test."""
    def put(text):
        _DETAILS[request.node.nodeid] = text
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = mark.args
        _RESULTS[item.nodeid] = (number, title, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (number, title, ok) in sorted(_RESULTS.items(), key=lambda kv: kv[1][0]):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}"
        if nodeid in _DETAILS:
            line += f" ({_DETAILS[nodeid]})"
        terminalreporter.write_line(line)
