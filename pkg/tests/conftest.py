import pytest

# criterion number -> (verdict, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for one acceptance criterion.

    The test calls ``verdict(n, detail)`` once it knows its number; the result
    is taken from the test outcome.
    """
    state = {}

    def record(number, detail=""):
        state["number"] = number
        state["detail"] = detail

    yield record
    if "number" in state:
        failed = getattr(request.node, "_call_failed", True)
        ACCEPTANCE[state["number"]] = ("FAIL" if failed else "PASS", state["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item._call_failed = report.failed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}".rstrip())
