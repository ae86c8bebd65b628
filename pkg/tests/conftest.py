import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _RESULTS[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_RESULTS):
        status, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
