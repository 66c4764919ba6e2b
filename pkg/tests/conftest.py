"""Collects the outcome of every acceptance criterion and prints one line each."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n = mark.args[0]
        entry = _RESULTS.setdefault(n, {"ok": True, "notes": [], "title": mark.kwargs.get("title", "")})
        entry["ok"] = entry["ok"] and report.outcome == "passed"
        entry["notes"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        r = _RESULTS[n]
        status = "PASS" if r["ok"] else "FAIL"
        notes = "; ".join(r["notes"])
        terminalreporter.write_line(f"criterion {n:2d} {status}  {r['title']}" + (f"  [{notes}]" if notes else ""))
