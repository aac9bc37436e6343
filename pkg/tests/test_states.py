import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qjump import (
    DensityMatrix,
    DensityMatrixSeries,
    JumpOperatorSet,
    NormUnderflow,
    OperatorMatrix,
    StateVector,
    expectation,
    kron,
    outer_product_normalized,
    squared_norm,
)

SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def basis(i, dim):
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return StateVector(v)


def test_squared_norm_unit_basis_state():
    for dim in (1, 2, 5):
        assert squared_norm(basis(0, dim)) == 1.0


def test_squared_norm_zero_vector():
    assert squared_norm(StateVector(np.zeros(3, dtype=complex))) == 0.0


def test_squared_norm_damped_amplitude():
    # analytic amplitude damping: p0 = exp(-gamma T)
    gamma, t = 0.1, 1.0
    psi = StateVector(np.exp(-gamma * t / 2) * np.array([1.0, 0.0], dtype=complex))
    assert squared_norm(psi) == pytest.approx(np.exp(-gamma * t), rel=1e-12)
    assert squared_norm(psi) == pytest.approx(0.904837, abs=1e-6)


def test_expectation_identity_and_scaling():
    ident = OperatorMatrix(np.eye(2))
    assert expectation(basis(0, 2), ident) == pytest.approx(1.0)
    half = StateVector(0.5 * basis(0, 2).amplitudes)
    assert expectation(half, ident) == pytest.approx(0.25)


def test_expectation_jump_rate():
    ell = OperatorMatrix(np.sqrt(0.3) * SIGMA_MINUS)
    ldl = OperatorMatrix(ell.entries.conj().T @ ell.entries)
    assert expectation(basis(0, 2), ldl) == pytest.approx(0.3)


def test_expectation_dimension_mismatch():
    with pytest.raises(ValueError):
        expectation(basis(0, 3), OperatorMatrix(np.eye(2)))


def test_outer_product_normalized():
    rho = outer_product_normalized(basis(0, 3))
    assert np.allclose(rho.entries, np.diag([1.0, 0.0, 0.0]))
    scaled = StateVector(0.3 * basis(1, 2).amplitudes)
    assert np.allclose(outer_product_normalized(scaled).entries, np.diag([0.0, 1.0]))


def test_outer_product_normalized_underflow():
    with pytest.raises(NormUnderflow):
        outer_product_normalized(StateVector(np.zeros(2, dtype=complex)))


def test_kron_identity_and_sigma_z():
    ident = OperatorMatrix(np.eye(2))
    assert np.array_equal(kron(ident, ident).entries, np.eye(4))
    sz = OperatorMatrix(np.diag([1.0, -1.0]))
    assert np.array_equal(kron(sz, ident).entries, np.diag([1.0, 1.0, -1.0, -1.0]))


def test_kron_flips_both_spins():
    sx = OperatorMatrix(np.array([[0, 1], [1, 0]], dtype=complex))
    up_up = np.zeros(4, dtype=complex)
    up_up[0] = 1.0
    flipped = kron(sx, sx).entries @ up_up
    down_down = np.zeros(4, dtype=complex)
    down_down[3] = 1.0
    assert np.array_equal(flipped, down_down)


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[1.0, 0.5], [0.0, 0.0]]))  # not Hermitian
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.7, 0.7]))  # trace 1.4
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.5, -0.5]))  # negative eigenvalue


def test_jump_operator_set_mixed_dims_rejected():
    with pytest.raises(ValueError):
        JumpOperatorSet((OperatorMatrix(np.eye(2)), OperatorMatrix(np.eye(3))))


def test_series_lookup():
    rho = DensityMatrix(np.diag([1.0, 0.0]))
    series = DensityMatrixSeries(times=(0.5, 1.0), states=(rho, rho))
    assert series.at(0.5) is rho
    with pytest.raises(KeyError):
        series.at(0.25)


@st.composite
def states(draw, dim=3):
    re = draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim))
    im = draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim))
    return StateVector(np.array(re) + 1j * np.array(im))


@given(states(), st.floats(0.1, 10), st.floats(0, 2 * np.pi))
def test_squared_norm_scaling(psi, mag, phase):
    c = mag * np.exp(1j * phase)
    scaled = StateVector(c * psi.amplitudes)
    assert squared_norm(scaled) == pytest.approx(abs(c) ** 2 * squared_norm(psi), rel=1e-12)


@given(states(), st.floats(0.1, 10), st.floats(0, 2 * np.pi))
@settings(max_examples=50)
def test_outer_product_scale_invariance(psi, mag, phase):
    if squared_norm(psi) < 1e-6:
        return
    c = mag * np.exp(1j * phase)
    a = outer_product_normalized(psi).entries
    b = outer_product_normalized(StateVector(c * psi.amplitudes)).entries
    assert np.max(np.abs(a - b)) <= 1e-12


@given(states())
def test_expectation_conjugate_symmetry(psi):
    rng = np.random.default_rng(3)
    op = OperatorMatrix(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    lhs = expectation(psi, op.dagger())
    rhs = np.conj(expectation(psi, op))
    assert lhs == pytest.approx(rhs, abs=1e-12)
