import math

import pytest

from band_scanner import find_gaps
from spectral_functions import FrequencyWindow, LatticeParams


@pytest.fixture(scope="session")
def config_a() -> LatticeParams:
    return LatticeParams(a1=1.0, a2=1.0, a3=1.0, mu=0.5, beta=math.pi / 2)


@pytest.fixture(scope="session")
def config_b() -> LatticeParams:
    return LatticeParams(a1=1.0, a2=1.0, a3=2.0, mu=0.5, beta=math.pi / 2)


@pytest.fixture(scope="session")
def type_one_gap(config_b):
    """The gap of config B around omega_0 = pi/2"""
    scan = find_gaps(config_b, FrequencyWindow(omega_lo=0.05, omega_hi=2.0))
    assert len(scan.gaps) == 1
    return scan.gaps[0]
