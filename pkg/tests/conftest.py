from __future__ import annotations

import numpy as np
import pytest

from wkbprofile.euler2d import EulerParams, build_euler
from wkbprofile.lattice_resonance import LiftCache, enumerate_resonances
from wkbprofile.system_model import linearize


@pytest.fixture(scope="session")
def params() -> EulerParams:
    return EulerParams()


@pytest.fixture(scope="session")
def lin(params):
    return linearize(build_euler(params))


@pytest.fixture(scope="session")
def cache(lin):
    return LiftCache(lin)


@pytest.fixture(scope="session")
def table_box6(lin, cache):
    return enumerate_resonances(lin, 6, 6, cache=cache)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
