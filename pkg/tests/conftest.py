import re

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    entry = _CRITERIA.setdefault(int(m.group(1)), {"ok": True, "notes": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["notes"] += [v for k, v in report.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if entry['ok'] else 'FAIL'}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")
