import pytest

_OUTCOMES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _OUTCOMES.append((marker.args[0], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _OUTCOMES:
        line = f"{'PASS' if passed else 'FAIL'}  {label}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
    n_pass = sum(p for _, p, _ in _OUTCOMES)
    terminalreporter.write_line(f"{n_pass}/{len(_OUTCOMES)} criteria passed")
