import pytest

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; enable with --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the end-of-run summary."""

    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE and not any("test_acceptance" in str(r.nodeid) for r in terminalreporter.stats.get("skipped", [])):
        return
    terminalreporter.section("acceptance criteria")
    skipped = {r.nodeid.rsplit("criterion_", 1)[-1].split("_")[0] for r in terminalreporter.stats.get("skipped", [])
               if "test_acceptance" in r.nodeid and "criterion_" in r.nodeid}
    for n in range(1, 10):
        if n in _ACCEPTANCE:
            ok, detail = _ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif str(n) in skipped:
            terminalreporter.write_line(f"criterion {n}: SKIPPED (slow suite; run with --runslow)")
