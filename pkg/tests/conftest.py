from __future__ import annotations

import pytest

from qcdlab.distributions import Bernoulli, DistributionPair, Gaussian

#: filled by test_acceptance.py; printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def gauss075() -> DistributionPair:
    return DistributionPair(Gaussian(0.0, 1.0), Gaussian(0.75, 1.0))


@pytest.fixture(scope="session")
def gauss08() -> DistributionPair:
    return DistributionPair(Gaussian(0.0, 1.0), Gaussian(0.8, 1.0))


@pytest.fixture(scope="session")
def bern() -> DistributionPair:
    return DistributionPair(Bernoulli(0.5), Bernoulli(0.8))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
