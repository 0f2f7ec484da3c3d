import re

import pytest

CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the acceptance criterion named by the test (``test_criterion_<n>_...``)."""
    number = re.match(r"test_criterion_(\d+)", request.node.name).group(1)
    lines = request.config.stash.setdefault(CRITERIA, [])
    reported = []

    def report(ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        reported.append(line)
        print(line)
        return ok

    yield report
    if not reported:
        lines.append(f"FAIL criterion {number}: did not complete")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
