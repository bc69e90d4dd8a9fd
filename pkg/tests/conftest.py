import pytest

# criterion number -> {"title", "outcomes", "details"}
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})
        entry["outcomes"].append(rep.passed)
        entry["details"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if all(entry["outcomes"]) else "FAIL"
        detail = f" [{', '.join(entry['details'])}]" if entry["details"] else ""
        terminalreporter.write_line(f"{verdict} criterion {number}: {entry['title']}{detail}")
