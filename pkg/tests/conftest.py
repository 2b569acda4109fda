import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (title, outcome, seconds)
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    _, status, seconds = _ACCEPTANCE.get(n, (title, "PASS", 0.0))
    if report.failed:
        status = "FAIL"
    elif report.skipped and status == "PASS":
        status = "SKIP"
    # fixture setup time (shared training runs) counts towards the criterion
    _ACCEPTANCE[n] = (title, status, seconds + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status, seconds = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}  ({seconds:.1f}s)")
