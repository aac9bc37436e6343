import numpy as np
import pytest

from qjump import (
    LindbladSystem,
    PropagationConfig,
    build_test_qubit,
    build_tfim,
    integrate_master,
    outer_product_normalized,
)


@pytest.fixture
def dark_qubit():
    return build_test_qubit("dark", gamma=0.1)


@pytest.fixture
def rabi_qubit():
    return build_test_qubit("rabi", gamma=0.05, omega=np.pi)


@pytest.fixture
def tfim2():
    j = np.pi / 2
    return build_tfim(2, g=2 * np.pi * j, j_coupling=j, gamma=0.03)


def lindblad_reference(model, total_time, record_at, h_step):
    sys_ = LindbladSystem(
        h=model.h, jumps=model.jumps, rho0=outer_product_normalized(model.psi0)
    )
    return integrate_master(sys_, total_time, record_at, h_step)
