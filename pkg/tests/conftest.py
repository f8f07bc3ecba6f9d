_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None:
        return
    ok, secs, details = _criteria.get(n, (True, 0.0, []))
    if report.when == "call" or report.failed:
        ok = ok and report.passed
        if "detail" in props and props["detail"] not in details:
            details.append(props["detail"])
    # setup time counts too, module fixtures carry the Monte-Carlo work
    _criteria[n] = (ok, secs + report.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, secs, details = _criteria[n]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status} ({secs:.1f} s) {'; '.join(details)}")
