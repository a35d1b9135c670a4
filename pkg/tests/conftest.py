import pytest

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    criterion = item.get_closest_marker("criterion")
    if criterion is None:
        return
    n = criterion.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[n] = ("PASS" if rep.passed else "FAIL", item.name, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, name, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}  {detail}")
