import numpy as np
import pytest
from scipy.linalg import expm

from qjump import (
    DensityMatrix,
    JumpOperatorSet,
    LindbladSystem,
    OperatorMatrix,
    PropagationConfig,
    StateVector,
    assemble_density,
    fidelity,
    integrate_master,
    lindblad_rhs,
    outer_product_normalized,
    run_dqj,
)
from qjump.models import SIGMA_MINUS, build_test_qubit

SZ = np.diag([1.0 + 0j, -1.0])


def damped_system(gamma, h=None):
    hop = OperatorMatrix(np.zeros((2, 2)) if h is None else h)
    jumps = JumpOperatorSet((OperatorMatrix(np.sqrt(gamma) * SIGMA_MINUS.entries),))
    rho0 = DensityMatrix(np.diag([1.0, 0.0]))
    return LindbladSystem(h=hop, jumps=jumps, rho0=rho0)


def test_rhs_dark_state_is_stationary():
    sys_ = damped_system(0.1)
    rhs = lindblad_rhs(DensityMatrix(np.diag([0.0, 1.0])), sys_)
    assert np.max(np.abs(rhs)) < 1e-15


def test_rhs_excited_state_decay():
    sys_ = damped_system(0.1)
    rhs = lindblad_rhs(sys_.rho0, sys_)
    assert np.allclose(rhs, 0.1 * np.diag([-1.0, 1.0]))


def test_rhs_trace_free_and_hermitian():
    rng = np.random.default_rng(11)
    mat = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = mat @ mat.conj().T
    rho = rho / rho.trace()
    sys_ = damped_system(0.3, h=SZ)
    rhs = lindblad_rhs(DensityMatrix(rho), sys_)
    assert abs(rhs.trace()) < 1e-12
    assert np.max(np.abs(rhs - rhs.conj().T)) < 1e-12


def test_master_amplitude_damping_analytic():
    series = integrate_master(damped_system(0.1), 1.0, [0.5, 1.0], h_step=1 / 200)
    rho = series.at(1.0).entries
    assert rho[0, 0].real == pytest.approx(np.exp(-0.1), abs=1e-9)


def test_master_closed_system_matches_expm():
    hop = OperatorMatrix(0.5 * SZ + 0.3 * np.array([[0, 1], [1, 0]]))
    rho0 = outer_product_normalized(StateVector(np.array([0.8, 0.6j])))
    sys_ = LindbladSystem(h=hop, jumps=JumpOperatorSet(()), rho0=rho0)
    series = integrate_master(sys_, 1.0, [1.0], h_step=1e-3)
    u = expm(-1j * hop.entries)
    expected = u @ rho0.entries @ u.conj().T
    assert np.max(np.abs(series.at(1.0).entries - expected)) < 1e-9


def test_master_trace_and_positivity_along_run():
    hop = OperatorMatrix(np.pi * np.array([[0, 0.5], [0.5, 0]]))
    jumps = JumpOperatorSet((OperatorMatrix(np.sqrt(0.2) * SIGMA_MINUS.entries),))
    sys_ = LindbladSystem(h=hop, jumps=jumps, rho0=DensityMatrix(np.diag([1.0, 0.0])))
    series = integrate_master(sys_, 1.0, np.linspace(0.1, 1.0, 10), h_step=1e-3)
    for state in series.states:
        assert abs(state.entries.trace() - 1.0) < 1e-8
        assert np.linalg.eigvalsh(state.entries).min() > -1e-8


def test_dqj1_matches_master_on_dark_model():
    # the one-jump family is exact here, so only integrator bias remains
    model = build_test_qubit("dark", gamma=0.1)
    cfg = PropagationConfig.for_grid(1.0, 10)
    contribs = run_dqj(model.h, model.jumps, model.psi0, 1.0, 1, 10, cfg, [1.0])
    rho = assemble_density(contribs, 1).at(1.0)
    sys_ = LindbladSystem(
        h=model.h, jumps=model.jumps, rho0=outer_product_normalized(model.psi0)
    )
    ref = integrate_master(sys_, 1.0, [1.0], h_step=cfg.h).at(1.0)
    assert 1.0 - fidelity(ref, rho) < 1e-10
