import pytest

_CRITERIA = {}


class CriterionLog:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.checks) and all(ok for ok, _ in self.checks)

    def finish(self):
        failed = [d for ok, d in self.checks if not ok]
        assert not failed, "; ".join(failed)


@pytest.fixture
def criterion(request):
    """Record named checks for an acceptance criterion and print a verdict line."""
    number, title = request.node.get_closest_marker("criterion").args
    log = CriterionLog(number, title)
    _CRITERIA[number] = log
    return log


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        log = _CRITERIA[number]
        verdict = "PASS" if log.passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{verdict}] {log.title}")
        for ok, detail in log.checks:
            terminalreporter.write_line(f"    {'ok  ' if ok else 'FAIL'} {detail}")
