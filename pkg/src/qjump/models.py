"""Benchmark systems: dissipative Ising chain, Kerr oscillator, test qubits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .states import JumpOperatorSet, OperatorMatrix, StateVector

SIGMA_X = OperatorMatrix(np.array([[0, 1], [1, 0]], dtype=complex))
SIGMA_Z = OperatorMatrix(np.array([[1, 0], [0, -1]], dtype=complex))
# basis convention: index 0 = up/excited, index 1 = down/ground
SIGMA_MINUS = OperatorMatrix(np.array([[0, 0], [1, 0]], dtype=complex))

_COHERENT_TAIL_LIMIT = 1e-3


class TruncationTooSmall(ValueError):
    """Coherent-state mass outside the truncated Fock space is too large."""


@dataclass(frozen=True, eq=False)
class ModelInstance:
    h: OperatorMatrix
    jumps: JumpOperatorSet
    psi0: StateVector
    label: str
    observables: dict[str, OperatorMatrix] = field(default_factory=dict)
    gamma: float = 0.0

    def __post_init__(self):
        n2 = float(np.vdot(self.psi0.amplitudes, self.psi0.amplitudes).real)
        if abs(n2 - 1.0) > 1e-12:
            raise ValueError(f"psi0 squared norm {n2!r} deviates from 1")
        if self.psi0.dim != self.h.dim:
            raise ValueError("psi0 and H dimension mismatch")
        if self.jumps.count and self.jumps.dim != self.h.dim:
            raise ValueError("jump operators and H dimension mismatch")

    @property
    def dim(self) -> int:
        return self.h.dim


def _site_operator(op: OperatorMatrix, site: int, n_sites: int) -> np.ndarray:
    mat = np.array([[1.0 + 0.0j]])
    for k in range(n_sites):
        mat = np.kron(mat, op.entries if k == site else np.eye(2))
    return mat


def build_tfim(n_qubits: int, g: float, j_coupling: float, gamma: float) -> ModelInstance:
    """Transverse-field Ising chain with local amplitude damping on every site.

    H = g sum_k sx_k + J sum_k sz_k sz_(k+1) on an open chain (nearest
    neighbours, n_qubits - 1 bonds; recorded in the label so results are
    self-describing). Jump set {sqrt(gamma) sminus_k}; initial state all-up.
    """
    if not 2 <= n_qubits <= 5:
        raise ValueError("n_qubits must lie in 2..5 (dense desk scale)")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    dim = 2**n_qubits
    h = np.zeros((dim, dim), dtype=complex)
    for k in range(n_qubits):
        h += g * _site_operator(SIGMA_X, k, n_qubits)
    for k in range(n_qubits - 1):
        h += j_coupling * (
            _site_operator(SIGMA_Z, k, n_qubits)
            @ _site_operator(SIGMA_Z, k + 1, n_qubits)
        )
    ops = tuple(
        OperatorMatrix(math.sqrt(gamma) * _site_operator(SIGMA_MINUS, k, n_qubits))
        for k in range(n_qubits)
    )
    psi0 = np.zeros(dim, dtype=complex)
    psi0[0] = 1.0  # |up...up>
    sz_total = np.zeros((dim, dim), dtype=complex)
    for k in range(n_qubits):
        sz_total += _site_operator(SIGMA_Z, k, n_qubits)
    return ModelInstance(
        h=OperatorMatrix(h),
        jumps=JumpOperatorSet(ops),
        psi0=StateVector(psi0),
        label=f"tfim(n={n_qubits},g={g:g},j={j_coupling:g},gamma={gamma:g},open)",
        observables={"sz_total": OperatorMatrix(sz_total)},
        gamma=gamma,
    )


def lowering_operator(n_fock: int) -> OperatorMatrix:
    """Bosonic annihilation operator on a Fock space truncated at n_fock."""
    dim = n_fock + 1
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = math.sqrt(n)
    return OperatorMatrix(a)


def coherent_state(n_fock: int, alpha: complex) -> StateVector:
    """Truncated coherent state, renormalized to exactly unit norm."""
    dim = n_fock + 1
    amps = np.empty(dim, dtype=complex)
    amps[0] = 1.0
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    amps *= math.exp(-0.5 * abs(alpha) ** 2)
    tail = 1.0 - float(np.vdot(amps, amps).real)
    if tail >= _COHERENT_TAIL_LIMIT:
        raise TruncationTooSmall(
            f"coherent tail mass {tail:.3e} >= {_COHERENT_TAIL_LIMIT:g}; "
            f"increase n_fock or reduce |alpha|"
        )
    amps /= math.sqrt(float(np.vdot(amps, amps).real))
    return StateVector(amps)


def build_kerr(
    n_fock: int, omega0: float, omega_k: float, gamma: float, alpha: complex
) -> ModelInstance:
    """Kerr oscillator H = omega0 n + (omega_k/2) n(n-1), single-photon loss.

    The dissipation channel is L = sqrt(gamma) a (standard cavity damping);
    the initial state is the truncated, renormalized coherent state |alpha>.
    Observables include the quadrature X = (a + a^dag)/sqrt(2).
    """
    if n_fock < 2:
        raise ValueError("n_fock must be >= 2")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    a = lowering_operator(n_fock)
    n_op = a.entries.conj().T @ a.entries
    h = omega0 * n_op + 0.5 * omega_k * (n_op @ n_op - n_op)
    x_quad = (a.entries + a.entries.conj().T) / math.sqrt(2.0)
    return ModelInstance(
        h=OperatorMatrix(h),
        jumps=JumpOperatorSet((OperatorMatrix(math.sqrt(gamma) * a.entries),)),
        psi0=coherent_state(n_fock, alpha),
        label=(
            f"kerr(n_fock={n_fock},omega0={omega0:g},omega_k={omega_k:g},"
            f"gamma={gamma:g},alpha={alpha!r})"
        ),
        observables={"X": OperatorMatrix(x_quad), "n": OperatorMatrix(n_op)},
        gamma=gamma,
    )


def build_test_qubit(kind: str, gamma: float, omega: float = 0.0) -> ModelInstance:
    """Exactly solvable single-qubit models used as test oracles.

    ``dark``: H = 0, L = sqrt(gamma) sminus, psi0 = |e>; the excited
    population decays as exp(-gamma t) and the post-jump state is dark.
    ``rabi``: H = (omega/2) sx with the same damping channel.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if kind == "dark":
        h = np.zeros((2, 2), dtype=complex)
    elif kind == "rabi":
        h = 0.5 * omega * SIGMA_X.entries
    else:
        raise ValueError(f"unknown test qubit kind {kind!r}")
    psi0 = np.array([1.0, 0.0], dtype=complex)  # |e>
    return ModelInstance(
        h=OperatorMatrix(h),
        jumps=JumpOperatorSet((OperatorMatrix(math.sqrt(gamma) * SIGMA_MINUS.entries),)),
        psi0=StateVector(psi0),
        label=f"test_qubit({kind},gamma={gamma:g},omega={omega:g})",
        observables={"sz": SIGMA_Z},
        gamma=gamma,
    )
