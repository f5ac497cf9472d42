import time

_SUITE_BUDGET_SECONDS = 60.0
_t0 = None


def pytest_sessionstart(session):
    global _t0
    _t0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _t0
    ok = elapsed < _SUITE_BUDGET_SECONDS
    verdict = "PASS" if ok else "FAIL"
    terminalreporter.write_line(
        f"criterion 9 [{verdict}]: full suite wall time {elapsed:.1f}s "
        f"(budget {_SUITE_BUDGET_SECONDS:.0f}s)"
    )


def pytest_sessionfinish(session, exitstatus):
    if _t0 is not None and time.perf_counter() - _t0 >= _SUITE_BUDGET_SECONDS:
        session.exitstatus = 1
