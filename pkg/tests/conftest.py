import numpy as np
import pytest

from hypodecay import functionals as fn
from hypodecay import matrix_core as mc

# The three reference pairs used throughout the suite.
SYS_A = (np.eye(2), np.eye(2))  # identity drift/diffusion
SYS_B = (np.eye(2), np.array([[1.0, 1.0], [0.0, 1.0]]))  # defective drift
SYS_C = (np.array([[2.0]]), np.array([[4.0]]))  # 1-D rescale
SYS_DIAG = (np.diag([1.0, 2.0]), np.diag([1.0, 2.0]))


@pytest.fixture(scope="session")
def grid1():
    return fn.QuadratureGrid.build(1, 60)


@pytest.fixture(scope="session")
def grid2():
    return fn.QuadratureGrid.build(2, 60)


def _normalized(D, C):
    system = mc.FPSystem(D=D, C=C)
    norm = mc.normalize_system(system)
    spec = mc.analyze_drift_spectrum(norm.C_tilde)
    return norm, spec


@pytest.fixture(scope="session")
def norm_A():
    return _normalized(*SYS_A)


@pytest.fixture(scope="session")
def norm_B():
    return _normalized(*SYS_B)


@pytest.fixture(scope="session")
def norm_DIAG():
    return _normalized(*SYS_DIAG)
