import numpy as np
import pytest
from scipy.linalg import expm

from qjump import (
    EffectiveHamiltonian,
    InvalidInterval,
    JumpOperatorSet,
    NormGrowthError,
    OperatorMatrix,
    PropagationConfig,
    StateVector,
    apply_jump,
    build_effective_hamiltonian,
    build_tfim,
    propagate_segment,
    squared_norm,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0 + 0j, -1.0])
SM = np.array([[0, 0], [1, 0]], dtype=complex)
EXCITED = StateVector(np.array([1.0, 0.0], dtype=complex))


def damping_set(gamma):
    return JumpOperatorSet((OperatorMatrix(np.sqrt(gamma) * SM),))


def test_build_effective_hamiltonian_pure_decay():
    heff = build_effective_hamiltonian(OperatorMatrix(np.zeros((2, 2))), damping_set(0.1))
    assert np.allclose(heff.matrix.entries, -0.05j * np.diag([1.0, 0.0]))


def test_build_effective_hamiltonian_empty_set():
    h = OperatorMatrix(SX)
    heff = build_effective_hamiltonian(h, JumpOperatorSet(()))
    assert np.array_equal(heff.matrix.entries, SX)


def test_build_effective_hamiltonian_sums_jump_set():
    ops = JumpOperatorSet(
        (OperatorMatrix(np.sqrt(0.1) * SM), OperatorMatrix(np.sqrt(0.1) * SM))
    )
    heff = build_effective_hamiltonian(OperatorMatrix(SX), ops)
    assert np.allclose(heff.decay_part.entries, 0.2 * np.diag([1.0, 0.0]))


def test_effective_hamiltonian_consistency_enforced():
    with pytest.raises(ValueError):
        EffectiveHamiltonian(
            matrix=OperatorMatrix(SX),
            hermitian_part=OperatorMatrix(SZ),
            decay_part=OperatorMatrix(np.zeros((2, 2))),
        )


def test_propagate_zero_hamiltonian_is_identity():
    heff = build_effective_hamiltonian(OperatorMatrix(np.zeros((2, 2))), JumpOperatorSet(()))
    res = propagate_segment(EXCITED, 0.0, 2.3, heff, PropagationConfig(h=0.01))
    assert np.allclose(res.final_state.amplitudes, EXCITED.amplitudes)


def test_propagate_matches_matrix_exponential_oracle():
    h = OperatorMatrix(0.5 * SZ)
    heff = build_effective_hamiltonian(h, JumpOperatorSet(()))
    res = propagate_segment(EXCITED, 0.0, np.pi, heff, PropagationConfig(h=np.pi / 2000))
    expected = expm(-1j * h.entries * np.pi) @ EXCITED.amplitudes
    assert np.max(np.abs(res.final_state.amplitudes - expected)) < 1e-10
    assert squared_norm(res.final_state) == pytest.approx(1.0, abs=1e-10)


def test_propagate_amplitude_damping_norm():
    heff = build_effective_hamiltonian(OperatorMatrix(np.zeros((2, 2))), damping_set(0.1))
    res = propagate_segment(EXCITED, 0.0, 1.0, heff, PropagationConfig(h=1 / 200))
    assert squared_norm(res.final_state) == pytest.approx(np.exp(-0.1), abs=1e-9)


def test_propagate_rejects_reversed_interval():
    heff = build_effective_hamiltonian(OperatorMatrix(np.zeros((2, 2))), JumpOperatorSet(()))
    with pytest.raises(InvalidInterval):
        propagate_segment(EXCITED, 1.0, 0.5, heff, PropagationConfig(h=0.1))


def test_recording_times_hit_exactly():
    heff = build_effective_hamiltonian(OperatorMatrix(0.5 * SZ), JumpOperatorSet(()))
    res = propagate_segment(
        EXCITED, 0.0, 1.0, heff, PropagationConfig(h=0.013), record_at=[0.37, 0.7, 1.0]
    )
    assert set(res.recorded) == {0.37, 0.7, 1.0}
    for t, state in res.recorded.items():
        expected = expm(-0.5j * SZ * t) @ EXCITED.amplitudes
        assert np.max(np.abs(state.amplitudes - expected)) < 1e-12


def test_segment_composition_bitwise():
    # same step boundaries => identical floats
    rng = np.random.default_rng(5)
    mat = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = OperatorMatrix(0.5 * (mat + mat.conj().T))
    heff = build_effective_hamiltonian(h, JumpOperatorSet(()))
    psi = StateVector(np.array([0.6, 0.8j, 0.0]))
    cfg = PropagationConfig(h=0.01)
    direct = propagate_segment(psi, 0.0, 1.0, heff, cfg, record_at=[0.4])
    first = propagate_segment(psi, 0.0, 0.4, heff, cfg)
    second = propagate_segment(first.final_state, 0.4, 1.0, heff, cfg)
    assert np.array_equal(direct.final_state.amplitudes, second.final_state.amplitudes)
    assert np.array_equal(direct.recorded[0.4].amplitudes, first.final_state.amplitudes)


def test_fourth_order_convergence():
    # halving h cuts the error against expm by 16 (within 30%)
    h_op = OperatorMatrix(SX + 0.3 * SZ)
    heff = build_effective_hamiltonian(h_op, damping_set(0.2))
    exact = expm(-1j * heff.matrix.entries) @ EXCITED.amplitudes

    def err(h):
        res = propagate_segment(EXCITED, 0.0, 1.0, heff, PropagationConfig(h=h))
        return np.linalg.norm(res.final_state.amplitudes - exact)

    ratio = err(0.02) / err(0.01)
    assert 16 * 0.7 <= ratio <= 16 * 1.3


def test_norm_monotone_under_decay():
    heff = build_effective_hamiltonian(OperatorMatrix(SX), damping_set(0.3))
    cfg = PropagationConfig(h=0.005)
    res = propagate_segment(EXCITED, 0.0, 1.0, heff, cfg, record_at=list(np.linspace(0.1, 1.0, 10)))
    norms = [squared_norm(res.recorded[t]) for t in sorted(res.recorded)]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(norms, norms[1:]))


def test_norm_conserved_without_decay_tfim():
    model = build_tfim(3, g=np.pi**2, j_coupling=np.pi / 2, gamma=0.0)
    heff = build_effective_hamiltonian(model.h, JumpOperatorSet(()))
    res = propagate_segment(model.psi0, 0.0, 1.0, heff, PropagationConfig(h=1 / 5120))
    assert abs(squared_norm(res.final_state) - 1.0) < 1e-10


def test_unstable_step_raises():
    heff = build_effective_hamiltonian(OperatorMatrix(50.0 * SZ), JumpOperatorSet(()))
    psi = StateVector(np.array([1.0, 1.0], dtype=complex) / np.sqrt(2))
    with pytest.raises(NormGrowthError):
        propagate_segment(psi, 0.0, 10.0, heff, PropagationConfig(h=1.0))


def test_apply_jump_unit_incoming():
    jumped, weight = apply_jump(EXCITED, OperatorMatrix(np.sqrt(0.3) * SM))
    assert weight == pytest.approx(0.3)
    assert np.allclose(jumped.amplitudes, [0.0, 1.0])
    assert squared_norm(jumped) == pytest.approx(1.0, rel=1e-12)


def test_apply_jump_scales_with_incoming_norm():
    half = StateVector(0.5 * EXCITED.amplitudes)
    jumped, weight = apply_jump(half, OperatorMatrix(np.sqrt(0.3) * SM))
    assert weight == pytest.approx(0.075)
    assert squared_norm(jumped) == pytest.approx(1.0, rel=1e-12)


def test_apply_jump_annihilation():
    ground = StateVector(np.array([0.0, 1.0], dtype=complex))
    jumped, weight = apply_jump(ground, OperatorMatrix(np.sqrt(0.3) * SM))
    assert jumped is None and weight == 0.0
