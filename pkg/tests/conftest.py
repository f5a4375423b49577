import numpy as np
import pytest

from sapso import GpsoParams

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def linear_params():
    return GpsoParams(r=2, dim=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[0][2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
