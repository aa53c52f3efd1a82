import sys

import pytest

from kestrel.constants import solve_ground_state


@pytest.fixture(scope="session")
def ground_states():
    cache = {}

    def get(d):
        if d not in cache:
            cache[d] = solve_ground_state(d, 1e-6)
        return cache[d]

    return get


def pytest_terminal_summary(terminalreporter):
    # repeat the acceptance PASS/FAIL lines, which are otherwise captured
    mod = next((m for name, m in list(sys.modules.items())
                if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
