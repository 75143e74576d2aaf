import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped or (rep.when != "call" and not rep.failed):
        return
    n, title = marker.args
    entry = _results.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]
    if rep.failed and rep.when == "call":
        msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else "failed"
        entry["details"].append(msg.splitlines()[0][:160])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        status = "PASS" if r["ok"] else "FAIL"
        detail = "; ".join(dict.fromkeys(r["details"]))
        terminalreporter.write_line(f"criterion {n:2d} {status}  {r['title']}" + (f"  [{detail}]" if detail else ""))
