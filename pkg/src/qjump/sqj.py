"""Adapted stochastic quantum-jump baseline with norm-threshold sampling.

A trajectory draws a random norm threshold, evolves under the effective
Hamiltonian until its squared norm falls to the threshold, jumps with a
randomly chosen operator (weighted by the instantaneous jump rates), and
repeats until the final time. The first threshold of every trajectory is
restricted to [p0, 1], where p0 is the zero-jump survival probability, so
each sampled trajectory carries at least one jump; the zero-jump part enters
the ensemble analytically with weight p0.

Trajectories use counter-based RNG substreams keyed by trajectory index, so
ensembles are bit-reproducible regardless of batching. All trajectories of
one run advance in lockstep on a shared substep lattice (one matrix product
per substep); threshold crossings are resolved per column by bisection with
re-integration inside the bracketing step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .propagation import (
    EffectiveHamiltonian,
    PropagationConfig,
    StepCache,
    _norms2,
    apply_jump,
    build_effective_hamiltonian,
    propagate_segment,
    split_steps,
)
from .states import (
    EPS_NORM,
    DensityMatrix,
    DensityMatrixSeries,
    JumpOperatorSet,
    OperatorMatrix,
    StateVector,
    outer_product_normalized,
    squared_norm,
)


class AllAnnihilated(RuntimeError):
    """Every jump operator annihilates the state at the jump time."""


class _Abort(Exception):
    """Internal: trajectory hit an annihilating jump and must be resampled."""


@dataclass(frozen=True)
class SqjConfig:
    n_traj: int
    seed: int
    bisection_tol: float = 1e-10

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0.0 < self.bisection_tol <= 1e-6:
            raise ValueError("bisection_tol must lie in (0, 1e-6]")


@dataclass(frozen=True, eq=False)
class SqjTrajectory:
    """Jump events of one sampled trajectory plus unit-norm recorded states."""

    jump_events: tuple[tuple[float, int], ...]
    recorded_states: dict[float, StateVector]

    def __post_init__(self):
        times = [t for t, _ in self.jump_events]
        if not times:
            raise ValueError("adapted scheme trajectories carry at least one jump")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump events must be strictly increasing in time")


@dataclass(frozen=True, eq=False)
class SqjResult:
    p0: float
    zero_jump: dict[float, StateVector]
    trajectories: tuple[SqjTrajectory, ...]
    resampled: int


class _StepNormPoly:
    """Squared norm along one RK4 step from a fixed state, as a polynomial.

    The RK4 update for step size s is the degree-4 Taylor polynomial
    sum_k s^k A^k psi / k!, so the squared norm along the step is a degree-8
    polynomial in s. Precomputing its coefficients makes each bisection
    iteration a scalar Horner evaluation; the evaluated state is identical
    to re-integrating the step from the bracket start.
    """

    def __init__(self, generator: np.ndarray, amps: np.ndarray):
        v = [np.asarray(amps, dtype=np.complex128)]
        for k in range(1, 5):
            v.append((generator @ v[-1]) / k)
        self.v = v
        stacked = np.stack(v)
        gram = (stacked.conj() @ stacked.T).real
        coeffs = [0.0] * 9
        for j in range(5):
            for k in range(5):
                coeffs[j + k] += gram[j, k]
        self.coeffs = coeffs

    def norm2(self, s: float) -> float:
        acc = self.coeffs[8]
        for m in range(7, -1, -1):
            acc = acc * s + self.coeffs[m]
        return acc

    def state(self, s: float) -> np.ndarray:
        acc = self.v[4]
        for k in range(3, -1, -1):
            acc = acc * s + self.v[k]
        return acc


def _bisect_step(poly: _StepNormPoly, width: float, target: float, tol: float) -> float:
    """Offset within [0, width] where the squared norm meets the target."""
    if poly.norm2(width) >= target * (1.0 - tol):
        return width
    lo, hi = 0.0, width
    while True:
        mid = 0.5 * (lo + hi)
        n2 = poly.norm2(mid)
        if abs(n2 - target) <= tol * target or hi - lo <= 1e-15 * width:
            return mid
        if n2 > target:
            lo = mid
        else:
            hi = mid


def _rk4_single(generator: np.ndarray, amps: np.ndarray, dt: float) -> np.ndarray:
    k1 = generator @ amps
    k2 = generator @ (amps + (0.5 * dt) * k1)
    k3 = generator @ (amps + (0.5 * dt) * k2)
    k4 = generator @ (amps + dt * k3)
    return amps + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def find_jump_time(
    psi_start: StateVector,
    t_start: float,
    t_end: float,
    target_norm: float,
    heff: EffectiveHamiltonian,
    cfg: PropagationConfig,
    tol: float = 1e-10,
) -> float | None:
    """Time at which the squared norm decays to ``target_norm``, or None.

    Crossing detection on the integrator step lattice, then bisection with
    re-integration inside the bracketing step until the norm matches the
    target to relative ``tol``. Returns None when the norm at ``t_end``
    stays above the target.
    """
    n2_start = squared_norm(psi_start)
    if not 0.0 < target_norm <= n2_start * (1.0 + tol):
        raise ValueError("target norm must lie in (0, squared_norm(start)]")
    if n2_start <= target_norm:
        return t_start
    generator = heff.generator()
    cache = StepCache(generator)
    amps = psi_start.amplitudes
    t_run = t_start
    for dt in split_steps(t_end - t_start, cfg.h):
        nxt = cache.matrix(dt) @ amps
        if float(np.vdot(nxt, nxt).real) < target_norm:
            poly = _StepNormPoly(generator, amps)
            return t_run + _bisect_step(poly, dt, target_norm, tol)
        amps = nxt
        t_run += dt
    return None


def choose_jump_operator(
    psi: StateVector, jumps: JumpOperatorSet, rng: np.random.Generator
) -> int:
    """Operator index drawn with probability <psi|L_i^dag L_i|psi> / sum."""
    deltas = np.array(
        [float(np.vdot(op.entries @ psi.amplitudes, op.entries @ psi.amplitudes).real)
         for op in jumps.operators]
    )
    total = float(deltas.sum())
    if total <= EPS_NORM:
        raise AllAnnihilated("all jump rates vanish at the jump time")
    draw = rng.random() * total
    return int(np.searchsorted(np.cumsum(deltas), draw, side="right"))


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    # counter-based substream per trajectory: reproducible independent of
    # execution order and batching
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def run_sqj(
    h: OperatorMatrix,
    jumps: JumpOperatorSet,
    psi0: StateVector,
    total_time: float,
    cfg: SqjConfig,
    record_at: Sequence[float],
    prop: PropagationConfig,
) -> SqjResult:
    """Sample the adapted stochastic jump ensemble.

    Computes the zero-jump trajectory and p0 once; every sampled trajectory
    draws its first threshold from [p0, 1] (guaranteeing at least one jump)
    and subsequent thresholds from [0, 1] against the renormalized post-jump
    norm. Trajectories whose jump annihilates the state are aborted and
    resampled with fresh draws from the same substream.
    """
    if abs(squared_norm(psi0) - 1.0) > 1e-10:
        raise ValueError("psi0 must be unit-norm")
    if jumps.count == 0:
        raise ValueError("adapted scheme requires a nonempty jump operator set")
    record = sorted(set(float(t) for t in record_at))
    if record and (record[0] <= 0.0 or record[-1] > total_time):
        raise ValueError("record_at times must lie within (0, T]")

    heff = build_effective_hamiltonian(h, jumps)
    generator = heff.generator()
    zero = propagate_segment(psi0, 0.0, total_time, heff, prop, record_at=record)
    p0 = squared_norm(zero.final_state)
    if p0 >= 1.0 - 1e-12:
        raise ValueError("no-jump probability is 1; nothing to sample")

    knots = record if (record and record[-1] == total_time) else record + [total_time]
    cache = StepCache(generator)
    rngs = [_trajectory_rng(cfg.seed, i) for i in range(cfg.n_traj)]

    events_out: list[list[tuple[float, int]] | None] = [None] * cfg.n_traj
    recorded_out: list[dict[float, StateVector] | None] = [None] * cfg.n_traj
    pending = list(range(cfg.n_traj))
    resampled = 0

    while pending:
        aborted = _sweep(
            pending, rngs, psi0.amplitudes, p0, knots, record, cache, generator,
            jumps, cfg.bisection_tol, prop.h, events_out, recorded_out,
        )
        resampled += len(aborted)
        pending = aborted

    trajectories = tuple(
        SqjTrajectory(jump_events=tuple(events_out[i]), recorded_states=recorded_out[i])
        for i in range(cfg.n_traj)
    )
    return SqjResult(
        p0=p0, zero_jump=dict(zero.recorded), trajectories=trajectories,
        resampled=resampled,
    )


def _sweep(
    indices, rngs, psi0_amps, p0, knots, record, cache, generator, jumps,
    tol, h_step, events_out, recorded_out,
) -> list[int]:
    """Advance the given trajectories in lockstep over the full interval."""
    m = len(indices)
    dim = psi0_amps.shape[0]
    amps = np.empty((dim, m), dtype=np.complex128, order="F")
    amps[:] = psi0_amps[:, None]
    thresh = np.empty(m)
    for b, gi in enumerate(indices):
        u = rngs[gi].random()
        while u == 0.0:  # keep the first threshold strictly above p0
            u = rngs[gi].random()
        thresh[b] = p0 + (1.0 - p0) * u
    events: list[list[tuple[float, int]]] = [[] for _ in range(m)]
    recs: list[dict[float, StateVector]] = [dict() for _ in range(m)]
    dead = np.zeros(m, dtype=bool)
    aborted: list[int] = []

    t_run = 0.0
    t_cur = 0.0
    for t_next in knots:
        for dt in split_steps(t_next - t_cur, h_step):
            prev = amps
            amps = cache.matrix(dt) @ amps
            crossed = np.flatnonzero(_norms2(amps) < thresh)
            for b in crossed:
                if dead[b]:
                    continue
                try:
                    state, new_thresh = _resolve_jumps(
                        generator, prev[:, int(b)], t_run, dt, thresh[int(b)],
                        rngs[indices[int(b)]], jumps, tol, events[int(b)],
                    )
                except _Abort:
                    dead[int(b)] = True
                    aborted.append(indices[int(b)])
                    thresh[int(b)] = -np.inf
                    continue
                amps[:, int(b)] = state
                thresh[int(b)] = new_thresh
            t_run += dt
        t_cur = t_next
        if t_next in record:
            n2 = _norms2(amps)
            for b in range(m):
                if not dead[b]:
                    recs[b][t_next] = StateVector(amps[:, b] / math.sqrt(n2[b]))

    for b, gi in enumerate(indices):
        if not dead[b]:
            events_out[gi] = events[b]
            recorded_out[gi] = recs[b]
    return aborted


def _resolve_jumps(generator, psi_a, t_a, width, target, rng, jumps, tol, events):
    """Resolve one or more threshold crossings inside a single substep."""
    while True:
        poly = _StepNormPoly(generator, psi_a)
        off = _bisect_step(poly, width, target, tol)
        tau = t_a + off
        psi_tau = StateVector(poly.state(off))
        try:
            j = choose_jump_operator(psi_tau, jumps, rng)
        except AllAnnihilated:
            raise _Abort from None
        jumped, weight = apply_jump(psi_tau, jumps.operators[j])
        if jumped is None:
            raise _Abort
        events.append((tau, j))
        target = rng.random()
        rem = width - off
        if rem > 0.0:
            state = _rk4_single(generator, jumped.amplitudes, rem)
        else:
            state = jumped.amplitudes
        if float(np.vdot(state, state).real) < target:
            psi_a, t_a, width = jumped.amplitudes, tau, rem
            continue
        return state, target


def assemble_sqj(
    p0: float,
    rho0_states: dict[float, StateVector],
    trajectories: Sequence[SqjTrajectory],
    record_at: Sequence[float],
) -> DensityMatrixSeries:
    """p0 rho0(t) + (1 - p0)/N * sum_j |psi_j(t)><psi_j(t)|."""
    if not trajectories:
        raise ValueError("at least one trajectory required")
    record = sorted(set(float(t) for t in record_at))
    n = len(trajectories)
    states: list[DensityMatrix] = []
    for t in record:
        rho = p0 * outer_product_normalized(rho0_states[t]).entries
        block = np.stack([tr.recorded_states[t].amplitudes for tr in trajectories], axis=1)
        n2 = _norms2(block)
        scaled = block * ((1.0 - p0) / (n * n2))
        rho = rho + scaled @ block.conj().T
        states.append(DensityMatrix(0.5 * (rho + rho.conj().T)))
    return DensityMatrixSeries(times=tuple(record), states=tuple(states))
