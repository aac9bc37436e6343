"""Fixed-step propagation under a non-Hermitian effective Hamiltonian.

States evolve by dpsi/dt = -i H_eff psi with the classical 4th-order
(RK4) fixed-step scheme. For a constant generator A = -i H_eff the RK4 update
is exactly the degree-4 Taylor polynomial of exp(dt A), so a step is applied
as one precomputed matrix-vector product; this also lets many trajectories
advance together as a single matrix-matrix product.

Requested target and recording times are hit exactly: stepping restarts at
every requested time and the last step of each stretch is shortened as
needed. No interpolation ever happens.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .states import EPS_NORM, JumpOperatorSet, OperatorMatrix, StateVector

_CONSTRUCTION_TOL = 1e-12
_PSD_TOL = 1e-10
_NORM_GROWTH_SLACK = 1e-10


class InvalidInterval(ValueError):
    """Propagation target time lies before the start time."""


class NormGrowthError(RuntimeError):
    """Squared norm grew beyond rounding slack on a step; step size too large."""


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    """H - (i/2) sum_j L_j^dag L_j with both parts kept separately."""

    matrix: OperatorMatrix
    hermitian_part: OperatorMatrix
    decay_part: OperatorMatrix

    def __post_init__(self):
        h = self.hermitian_part.entries
        d = self.decay_part.entries
        m = self.matrix.entries
        if np.max(np.abs(h - h.conj().T)) > _CONSTRUCTION_TOL:
            raise ValueError("hermitian_part is not Hermitian")
        if np.max(np.abs(d - d.conj().T)) > _CONSTRUCTION_TOL:
            raise ValueError("decay_part is not Hermitian")
        if float(np.linalg.eigvalsh(d).min()) < -_PSD_TOL:
            raise ValueError("decay_part is not positive semidefinite")
        if np.max(np.abs(m - (h - 0.5j * d))) > _CONSTRUCTION_TOL:
            raise ValueError("matrix != hermitian_part - (i/2) decay_part")

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def generator(self) -> np.ndarray:
        """Raw -i H_eff, the right-hand-side generator of the state ODE."""
        return -1j * self.matrix.entries


def build_effective_hamiltonian(h: OperatorMatrix, jumps: JumpOperatorSet) -> EffectiveHamiltonian:
    """Assemble H - (i/2) sum L^dag L from a Hamiltonian and a jump set."""
    if jumps.count and jumps.dim != h.dim:
        raise ValueError(f"dimension mismatch: H {h.dim}, jump operators {jumps.dim}")
    decay = jumps.total_decay(dim=h.dim)
    return EffectiveHamiltonian(
        matrix=OperatorMatrix(h.entries - 0.5j * decay),
        hermitian_part=h,
        decay_part=OperatorMatrix(decay),
    )


@dataclass(frozen=True)
class PropagationConfig:
    """Fixed substep size and integrator tag ("rk4" is the only method)."""

    h: float
    method: str = "rk4"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("substep h must be positive")
        if self.method != "rk4":
            raise ValueError(f"unknown integrator method {self.method!r}")

    @classmethod
    def for_grid(cls, total_time: float, n_grid: int, div: int = 20) -> "PropagationConfig":
        """Substep tied to a jump-time grid: h = (T / n_grid) / div.

        Keeps the integrator error co-scaling below the O(1/n_grid^2) grid
        error, so grid-error slopes stay observable.
        """
        return cls(h=(total_time / n_grid) / div)


@dataclass(frozen=True, eq=False)
class SegmentResult:
    final_state: StateVector
    recorded: dict[float, StateVector] = field(default_factory=dict)


def step_matrix(generator: np.ndarray, dt: float) -> np.ndarray:
    """One-step RK4 update matrix: degree-4 Taylor polynomial of exp(dt A)."""
    dim = generator.shape[0]
    eye = np.eye(dim, dtype=np.complex128)
    u = eye + (dt / 4.0) * generator
    u = eye + (dt / 3.0) * (generator @ u)
    u = eye + (dt / 2.0) * (generator @ u)
    return eye + dt * (generator @ u)


def split_steps(span: float, h: float) -> list[float]:
    """Step sizes covering a stretch: full steps of h, last one shortened."""
    if span <= 0.0:
        return []
    n_full = int(span / h + 1e-9)
    rest = span - n_full * h
    sizes = [h] * n_full
    if rest > 1e-9 * h:
        sizes.append(rest)
    elif not sizes:
        sizes.append(span)
    return sizes


class StepCache:
    """Memoizes step matrices per step size for one generator."""

    def __init__(self, generator: np.ndarray):
        self.generator = generator
        self._by_dt: dict[float, np.ndarray] = {}

    def matrix(self, dt: float) -> np.ndarray:
        u = self._by_dt.get(dt)
        if u is None:
            u = step_matrix(self.generator, dt)
            self._by_dt[dt] = u
        return u


def _norms2(amps: np.ndarray) -> np.ndarray:
    """Columnwise squared norms of a (dim,) or (dim, m) amplitude block."""
    return np.einsum("i...,i...->...", amps.conj(), amps).real


def _advance(
    amps: np.ndarray,
    cache: StepCache,
    span: float,
    h: float,
    check_norm: bool,
) -> np.ndarray:
    """Advance a (dim,) or (dim, m) block of unnormalized states by `span`."""
    n2_prev = _norms2(amps) if check_norm else None
    for dt in split_steps(span, h):
        amps = cache.matrix(dt) @ amps
        if check_norm:
            n2 = _norms2(amps)
            if np.any(n2 > n2_prev * (1.0 + _NORM_GROWTH_SLACK)):
                raise NormGrowthError(
                    f"squared norm grew on a step of size {dt:g}; reduce the substep"
                )
            n2_prev = n2
    return amps


def propagate_segment(
    psi0: StateVector,
    t0: float,
    t1: float,
    heff: EffectiveHamiltonian,
    cfg: PropagationConfig,
    record_at: Sequence[float] = (),
) -> SegmentResult:
    """Integrate -i H_eff psi from t0 to t1, recording unnormalized states.

    Every requested time (and t1) is an exact step boundary: stepping
    restarts at each recording time, with the last step before it shortened.
    """
    if t1 < t0:
        raise InvalidInterval(f"t1={t1} < t0={t0}")
    if psi0.dim != heff.dim:
        raise ValueError(f"dimension mismatch: state {psi0.dim}, H_eff {heff.dim}")
    record = sorted(set(float(t) for t in record_at))
    if record and (record[0] < t0 or record[-1] > t1):
        raise ValueError("record_at times must lie within [t0, t1]")

    cache = StepCache(heff.generator())
    amps = psi0.amplitudes.copy()
    recorded: dict[float, StateVector] = {}
    knots = record if (record and record[-1] == t1) else record + [t1]
    t_cur = t0
    for t_next in knots:
        amps = _advance(amps, cache, t_next - t_cur, cfg.h, check_norm=True)
        t_cur = t_next
        if t_next in record:
            recorded[t_next] = StateVector(amps)
    return SegmentResult(final_state=StateVector(amps), recorded=recorded)


def apply_jump(psi: StateVector, jump_op: OperatorMatrix) -> tuple[StateVector | None, float]:
    """Apply one quantum jump; returns (unit-norm jumped state, weight).

    The weight is <psi|L^dag L|psi> evaluated on the *unnormalized* incoming
    state, so all probability bookkeeping lives in the scalar and the
    returned state always has squared norm exactly one. Returns
    ``(None, 0.0)`` when the jump annihilates the trajectory; the caller
    must drop it with zero weight.
    """
    if psi.dim != jump_op.dim:
        raise ValueError(f"dimension mismatch: state {psi.dim}, operator {jump_op.dim}")
    jumped = jump_op.entries @ psi.amplitudes
    weight = float(np.vdot(jumped, jumped).real)
    n2_in = float(np.vdot(psi.amplitudes, psi.amplitudes).real)
    if weight <= EPS_NORM * n2_in:
        return None, 0.0
    return StateVector(jumped / np.sqrt(weight)), weight
