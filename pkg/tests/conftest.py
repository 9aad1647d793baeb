"""Prints one line per acceptance criterion at the end of the run."""

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = report.keywords.get("criterion")
    if marker is None:
        return
    key = report.nodeid.split("::")[-1]
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    ACCEPTANCE[key] = ("PASS" if report.passed else "FAIL", detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.keywords["criterion"] = m.args


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{status}  {key}" + (f"  [{detail}]" if detail else ""))
