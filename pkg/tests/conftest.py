"""Collects acceptance results and prints one line per criterion at the end."""

import pytest

_RESULTS: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    if not rep.passed and not details:
        details = [f"{item.name}: {rep.longrepr.reprcrash.message if hasattr(rep.longrepr, 'reprcrash') else 'error'}"]
    entry["details"].extend(details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        status = "PASS" if e["ok"] else "FAIL"
        tr.write_line(f"criterion {number:2d} {status}  {e['title']}")
        for d in e["details"]:
            tr.write_line(f"      {d}")
