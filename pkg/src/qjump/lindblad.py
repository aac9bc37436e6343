"""Ground-truth density-matrix evolution by direct master-equation integration.

This is the oracle every fidelity/error measurement compares against. It uses
the same fixed-step RK4 scheme and step policy as the trajectory propagator so
that oracle and unraveling share integrator bias, isolating the sampling error
under study.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .propagation import split_steps
from .states import (
    DensityMatrix,
    DensityMatrixSeries,
    JumpOperatorSet,
    OperatorMatrix,
)

_RHO0_EIG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LindbladSystem:
    """Hamiltonian, jump set and a valid initial density matrix."""

    h: OperatorMatrix
    jumps: JumpOperatorSet
    rho0: DensityMatrix

    def __post_init__(self):
        if self.rho0.dim != self.h.dim:
            raise ValueError(f"dimension mismatch: H {self.h.dim}, rho0 {self.rho0.dim}")
        if self.jumps.count and self.jumps.dim != self.h.dim:
            raise ValueError("jump operators do not match the Hamiltonian dimension")
        lo = float(np.linalg.eigvalsh(self.rho0.entries).min())
        if lo < -_RHO0_EIG_TOL:
            raise ValueError(f"rho0 is not PSD: min eigenvalue {lo:.3e}")

    @property
    def dim(self) -> int:
        return self.h.dim


def lindblad_rhs(rho: DensityMatrix | np.ndarray, sys: LindbladSystem) -> np.ndarray:
    """-i[H, rho] + sum_L (L rho L^dag - (1/2){L^dag L, rho}).

    Trace-free and Hermitian by construction (to rounding).
    """
    mat = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if mat.shape != (sys.dim, sys.dim):
        raise ValueError(f"dimension mismatch: rho {mat.shape}, system {sys.dim}")
    return _rhs_raw(mat, sys.h.entries, _jump_arrays(sys.jumps))


def _jump_arrays(jumps: JumpOperatorSet) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    out = []
    for op in jumps.operators:
        l = op.entries
        ld = l.conj().T
        out.append((l, ld, ld @ l))
    return out


def _rhs_raw(rho, h, jump_arrays):
    out = -1j * (h @ rho - rho @ h)
    for l, ld, ldl in jump_arrays:
        out += l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def integrate_master(
    sys: LindbladSystem,
    total_time: float,
    record_at: Sequence[float],
    h_step: float,
) -> DensityMatrixSeries:
    """Fixed-step RK4 integration of the master equation.

    Recording times are exact step boundaries (last step before each one is
    shortened); every recorded matrix is re-symmetrized as (rho + rho^dag)/2.
    """
    record = sorted(set(float(t) for t in record_at))
    if record and (record[0] < 0.0 or record[-1] > total_time):
        raise ValueError("record_at times must lie within [0, T]")
    if not h_step > 0:
        raise ValueError("step size must be positive")

    h_mat = sys.h.entries
    jump_arrays = _jump_arrays(sys.jumps)
    rho = sys.rho0.entries.copy()

    out_times: list[float] = []
    out_states: list[DensityMatrix] = []
    t_cur = 0.0
    for t_next in record:
        for dt in split_steps(t_next - t_cur, h_step):
            k1 = _rhs_raw(rho, h_mat, jump_arrays)
            k2 = _rhs_raw(rho + 0.5 * dt * k1, h_mat, jump_arrays)
            k3 = _rhs_raw(rho + 0.5 * dt * k2, h_mat, jump_arrays)
            k4 = _rhs_raw(rho + dt * k3, h_mat, jump_arrays)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        t_cur = t_next
        out_times.append(t_next)
        out_states.append(DensityMatrix(0.5 * (rho + rho.conj().T)))
    return DensityMatrixSeries(times=tuple(out_times), states=tuple(out_states))
