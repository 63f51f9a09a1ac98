import warnings

import numpy as np
import pytest

from sdiqrng import matcore, optics


KET0 = np.array([1.0, 0.0])
KET1 = np.array([0.0, 1.0])
PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
MINUS = np.array([1.0, -1.0]) / np.sqrt(2)


def proj(v):
    return matcore.projector(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def paper_params():
    return optics.OpticalParams(mu=0.1, eta_ch=1.0, p_d=1e-8, p_z=0.5, p_s=0.5)


@pytest.fixture(autouse=True)
def _quiet_redundancy():
    from sdiqrng.sdp import RedundantConstraintWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RedundantConstraintWarning)
        yield


# one (number, title, passed, detail) entry per acceptance criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
