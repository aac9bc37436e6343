"""Dense complex-vector/matrix value types shared by every solver module.

Everything is double-precision dense numpy; target dimensions are tiny
(<= 32 for spin chains, <= 16 for truncated oscillators), so no sparse or
structured representations. All types are frozen after construction and
safe to share between workers; the module-level operations are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Squared-norm threshold (relative to a unit state) below which a
#: trajectory counts as annihilated.
EPS_NORM = 1e-14

_HERMITIAN_TOL = 1e-10
_TRACE_TOL = 1e-8
_EIG_TOL = 1e-8


class NormUnderflow(ValueError):
    """Raised when a state's squared norm is too small to normalize."""


def _frozen_array(a, shape_kind: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.complex128)
    if shape_kind == "vector":
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValueError(f"expected a complex vector, got shape {arr.shape}")
    else:
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"expected a square complex matrix, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitude vector; possibly unnormalized.

    The squared norm of an unnormalized effective-Hamiltonian trajectory is
    the running no-jump probability, so states are deliberately not
    renormalized on construction.
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen_array(self.amplitudes, "vector"))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Square complex matrix acting on :class:`StateVector` amplitudes."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen_array(self.entries, "matrix"))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.entries.conj().T)


@dataclass(frozen=True, eq=False)
class JumpOperatorSet:
    """Ordered collection of jump operators, rates absorbed (L = sqrt(gamma) A).

    Operator index is a persistent identity: trajectory bookkeeping refers to
    operators by their position in this tuple.
    """

    operators: tuple[OperatorMatrix, ...]

    def __post_init__(self):
        ops = tuple(self.operators)
        dims = {op.dim for op in ops}
        if len(dims) > 1:
            raise ValueError(f"jump operators have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "operators", ops)

    @property
    def count(self) -> int:
        return len(self.operators)

    @property
    def dim(self) -> int:
        if not self.operators:
            raise ValueError("empty jump operator set has no dimension")
        return self.operators[0].dim

    def total_decay(self, dim: int | None = None) -> np.ndarray:
        """Sum of L^dag L over the set (raw matrix); zero matrix if empty."""
        if not self.operators:
            if dim is None:
                raise ValueError("dim required for an empty jump operator set")
            return np.zeros((dim, dim), dtype=np.complex128)
        acc = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for op in self.operators:
            acc += op.entries.conj().T @ op.entries
        return acc


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, trace-one, (numerically) positive semidefinite matrix.

    Construction enforces Hermiticity to 1e-10, trace to 1e-8 and eigenvalues
    >= -1e-8; intermediate accumulations should use raw arrays and only wrap
    the final assembled/normalized matrix.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.entries, "matrix")
        herm = np.max(np.abs(arr - arr.conj().T))
        if herm > _HERMITIAN_TOL:
            raise ValueError(f"matrix not Hermitian: max |rho_ij - conj(rho_ji)| = {herm:.3e}")
        tr = arr.trace()
        if abs(tr - 1.0) > _TRACE_TOL:
            raise ValueError(f"trace deviates from 1 by {abs(tr - 1.0):.3e}")
        lo = float(np.linalg.eigvalsh(0.5 * (arr + arr.conj().T)).min())
        if lo < -_EIG_TOL:
            raise ValueError(f"matrix not PSD: min eigenvalue {lo:.3e}")
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class DensityMatrixSeries:
    """Density matrices indexed by strictly increasing recording times."""

    times: tuple[float, ...]
    states: tuple[DensityMatrix, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.states):
            raise ValueError("times and states length mismatch")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("recording times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", tuple(self.states))

    def __len__(self) -> int:
        return len(self.times)

    def at(self, t: float) -> DensityMatrix:
        try:
            return self.states[self.times.index(t)]
        except ValueError:
            raise KeyError(f"time {t!r} not recorded") from None

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]


def squared_norm(psi: StateVector) -> float:
    """Sum of |amplitude|^2; the no-jump probability for H_eff trajectories."""
    return float(np.vdot(psi.amplitudes, psi.amplitudes).real)


def expectation(psi: StateVector, op: OperatorMatrix) -> complex:
    """<psi|O|psi> without normalizing psi."""
    if psi.dim != op.dim:
        raise ValueError(f"dimension mismatch: state {psi.dim}, operator {op.dim}")
    return complex(np.vdot(psi.amplitudes, op.entries @ psi.amplitudes))


def outer_product_normalized(psi: StateVector) -> DensityMatrix:
    """|psi><psi| / ||psi||^2, a rank-one unit-trace density matrix."""
    n2 = squared_norm(psi)
    if n2 <= EPS_NORM:
        raise NormUnderflow(f"squared norm {n2:.3e} at or below annihilation threshold")
    return DensityMatrix(np.outer(psi.amplitudes, psi.amplitudes.conj()) / n2)


def kron(a: OperatorMatrix, b: OperatorMatrix) -> OperatorMatrix:
    """Kronecker product; dim = dim(a) * dim(b)."""
    return OperatorMatrix(np.kron(a.entries, b.entries))
