"""Print one PASS/FAIL line per acceptance criterion in the terminal summary."""

_CRITERIA = {}
_OUTCOMES = {}


def pytest_collection_modifyitems(items):
    for item in items:
        name = getattr(item, "originalname", item.name)
        if name.startswith("test_criterion_"):
            number = int(name.split("_")[2])
            doc = (item.function.__doc__ or name).strip().splitlines()[0]
            _CRITERIA[item.nodeid] = (number, doc)


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    if report.failed:
        _OUTCOMES[report.nodeid] = "FAIL"
    elif report.when == "call" and report.nodeid not in _OUTCOMES:
        _OUTCOMES[report.nodeid] = "PASS"
    elif report.skipped:
        _OUTCOMES.setdefault(report.nodeid, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (number, doc) in sorted(_CRITERIA.items(), key=lambda kv: kv[1][0]):
        if nodeid in _OUTCOMES:
            terminalreporter.write_line(f"criterion {number:2d}: {_OUTCOMES[nodeid]}  {doc}")
