"""Deterministic quantum jump (DQJ) engine for jump orders 1-3.

Jump times are placed deterministically on equally spaced grids (midpoints,
plus simplex barycenters where the time-ordering constraint cuts a grid
cell), each tuple carrying the quadrature weight of its cell. Trajectories
evolve under the non-Hermitian effective Hamiltonian, jump at the grid
times, and are assembled into a trace-preserving density matrix weighted by
their occurrence probabilities.

Internally all grid times are integer multiples of dt/12 ("ticks"), the
common denominator of every fraction appearing in the grids, so shared
trajectory prefixes dedupe exactly and every propagation restarts on one
global knot lattice. A single growing matrix of trajectory columns advances
between knots with one matrix product per substep, which is what makes
order-2 runs with ~1e5 trajectories feasible.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .propagation import (
    EffectiveHamiltonian,
    PropagationConfig,
    StepCache,
    _norms2,
    build_effective_hamiltonian,
    split_steps,
)
from .states import (
    EPS_NORM,
    DensityMatrix,
    DensityMatrixSeries,
    JumpOperatorSet,
    OperatorMatrix,
    StateVector,
    squared_norm,
)

logger = logging.getLogger(__name__)

KIND_CARTESIAN = "cartesian"
KIND_BARY_2 = "bary_2"
KIND_BARY_3A = "bary_3a"
KIND_BARY_3B = "bary_3b"
KIND_BARY_3C = "bary_3c"

#: Residual no-jump deficit below which a run counts as jump-free during
#: assembly (absorbs integrator rounding on the zero-jump norm).
_PURE_TOL = 1e-9

_CLOSURE_RTOL = 1e-12


class InvalidOrder(ValueError):
    """Jump order outside the supported range 1-3."""


class DegenerateNormalization(RuntimeError):
    """Nonzero jump probability but no surviving jump trajectories."""


@dataclass(frozen=True)
class GridPoint:
    times: tuple[float, ...]
    weight: float
    kind: str


@dataclass(frozen=True, eq=False)
class JumpTimeGrid:
    """Ordered jump-time tuples with quadrature weights for one jump order."""

    order: int
    total_time: float
    n_grid: int
    points: tuple[GridPoint, ...]

    def __post_init__(self):
        for p in self.points:
            if any(b <= a for a, b in zip(p.times, p.times[1:])):
                raise ValueError(f"jump times not strictly increasing: {p.times}")
            if p.times and (p.times[0] <= 0.0 or p.times[-1] >= self.total_time):
                raise ValueError(f"jump times outside (0, T): {p.times}")
        target = self.total_time**self.order / math.factorial(self.order)
        total = math.fsum(p.weight for p in self.points)
        if abs(total - target) > _CLOSURE_RTOL * target:
            raise ValueError(
                f"weight sum {total!r} differs from simplex volume {target!r}"
            )

    @property
    def dt(self) -> float:
        return self.total_time / self.n_grid


def _tick_points(order: int, n_grid: int) -> list[tuple[tuple[int, ...], float, str]]:
    """Grid tuples in units of dt/12 with weights in units of dt^order.

    Weights are the simplex volumes of the grid cells each point represents:
    full cells carry dt^n, a diagonal cell cut to a triangle/tetrahedron
    carries dt^n/n!, and the half-cell prisms of the order-3 grid carry
    dt^3/2 each. Their sum tiles the ordered-time simplex exactly.
    """
    mids = [12 * m + 6 for m in range(n_grid)]
    if order == 1:
        return [((q,), 1.0, KIND_CARTESIAN) for q in mids]
    if order == 2:
        pts = [((a, b), 1.0, KIND_CARTESIAN) for a, b in itertools.combinations(mids, 2)]
        pts += [((q - 2, q + 2), 0.5, KIND_BARY_2) for q in mids]
        return pts
    if order == 3:
        pts = [
            ((a, b, c), 1.0, KIND_CARTESIAN)
            for a, b, c in itertools.combinations(mids, 3)
        ]
        pts += [((q - 3, q, q + 3), 1.0 / 6.0, KIND_BARY_3A) for q in mids]
        pts += [
            ((12 * l + 6, 12 * k + 4, 12 * k + 8), 0.5, KIND_BARY_3B)
            for k in range(n_grid)
            for l in range(k)
        ]
        pts += [
            ((12 * l + 4, 12 * l + 8, 12 * k + 6), 0.5, KIND_BARY_3C)
            for k in range(n_grid)
            for l in range(k)
        ]
        return pts
    raise InvalidOrder(f"jump order must be 1, 2 or 3, got {order}")


def build_grid(order: int, total_time: float, n_grid: int) -> JumpTimeGrid:
    """Deterministic jump-time grid with quadrature weights for one order."""
    if order not in (1, 2, 3):
        raise InvalidOrder(f"jump order must be 1, 2 or 3, got {order}")
    if n_grid < 1:
        raise ValueError("n_grid must be >= 1")
    tick_unit = total_time / (12 * n_grid)
    dt = total_time / n_grid
    points = tuple(
        GridPoint(
            times=tuple(q * tick_unit for q in ticks),
            weight=w * dt**order,
            kind=kind,
        )
        for ticks, w, kind in _tick_points(order, n_grid)
    )
    return JumpTimeGrid(order=order, total_time=total_time, n_grid=n_grid, points=points)


def count_trajectories(order: int, n_grid: int, n_jump_ops: int) -> int:
    """Closed-form trajectory count: 1 + sum over orders of grid size * N_J^n.

    Note: the order-3 term uses the closed form N(N^2 - 2N + 2), which
    overcounts the order-3 grid actually constructed (its point count is
    N(N+1)(N+2)/6; the two agree only for N <= 2). See build_grid and the
    acceptance suite, which reports the discrepancy rather than hiding it.
    """
    if order not in (1, 2, 3):
        raise InvalidOrder(f"jump order must be 1, 2 or 3, got {order}")
    if n_grid < 1 or n_jump_ops < 1:
        raise ValueError("n_grid and n_jump_ops must be >= 1")
    total = 1 + n_grid * n_jump_ops
    if order >= 2:
        total += n_grid * (n_grid + 1) * n_jump_ops**2 // 2
    if order >= 3:
        total += n_grid * (n_grid**2 - 2 * n_grid + 2) * n_jump_ops**3
    return total


@dataclass(frozen=True)
class TrajectorySpec:
    """One trajectory: jump times, operator indices, and its grid weight."""

    jump_times: tuple[float, ...]
    jump_operator_indices: tuple[int, ...]
    grid_weight: float

    def __post_init__(self):
        if len(self.jump_times) != len(self.jump_operator_indices):
            raise ValueError("jump_times and jump_operator_indices length mismatch")

    @property
    def order(self) -> int:
        return len(self.jump_times)


def trajectory_specs(
    order: int, total_time: float, n_grid: int, n_jump_ops: int
) -> list[TrajectorySpec]:
    """All trajectories of a run: the zero-jump one plus every grid point
    combined with every ordered tuple of jump-operator indices."""
    specs = [TrajectorySpec(jump_times=(), jump_operator_indices=(), grid_weight=1.0)]
    for n in range(1, order + 1):
        grid = build_grid(n, total_time, n_grid)
        for point in grid.points:
            for ops in itertools.product(range(n_jump_ops), repeat=n):
                specs.append(
                    TrajectorySpec(
                        jump_times=point.times,
                        jump_operator_indices=ops,
                        grid_weight=point.weight,
                    )
                )
    return specs


@dataclass(frozen=True, eq=False)
class JumpOrderContribution:
    """Unnormalized weighted sum over one jump order's trajectories.

    ``weighted_sum[t]`` holds sum_k p_k rho_k(t) as a raw matrix; its trace
    equals ``norm_constant`` (each trajectory matrix has unit trace). The
    zero-jump entry additionally carries the no-jump probability ``p0`` and
    its weighted_sum is p0 * rho0(t).
    """

    order: int
    weighted_sum: dict[float, np.ndarray]
    norm_constant: float
    p0: float | None = None


class _NodeTable:
    """Trajectory-prefix nodes of one depth, stored as parallel arrays."""

    def __init__(self, depth: int):
        self.depth = depth
        self.index: dict[tuple, int] = {}
        self.parent: list[int] = []
        self.op: list[int] = []
        self.ticks: list[tuple[int, ...]] = []
        self.ancestors: list[tuple[int, ...]] = []  # prefix node index per depth 1..k
        self.grid_weight: list[float] = []
        # run state
        self.w_prod: np.ndarray | None = None
        self.col: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.parent)

    def get_or_add(self, ticks: tuple[int, ...], ops: tuple[int, ...], parent: int,
                   parent_anc: tuple[int, ...]) -> int:
        key = (ticks, ops)
        idx = self.index.get(key)
        if idx is None:
            idx = len(self.parent)
            self.index[key] = idx
            self.parent.append(parent)
            self.op.append(ops[-1])
            self.ticks.append(ticks)
            self.ancestors.append(parent_anc + (idx,))
            self.grid_weight.append(0.0)
        return idx


def _build_node_tables(
    grids: Sequence[JumpTimeGrid], n_jump_ops: int, n_grid: int, total_time: float
) -> list[_NodeTable]:
    tables = [_NodeTable(depth=k) for k in range(1, len(grids) + 1)]
    scale = 12 * n_grid / total_time
    for grid in grids:
        n = grid.order
        for point in grid.points:
            ticks = tuple(int(round(t * scale)) for t in point.times)
            for ops in itertools.product(range(n_jump_ops), repeat=n):
                parent, anc = -1, ()
                for k in range(1, n + 1):
                    idx = tables[k - 1].get_or_add(ticks[:k], ops[:k], parent, anc)
                    anc = tables[k - 1].ancestors[idx]
                    parent = idx
                tables[n - 1].grid_weight[parent] += point.weight
    return tables


def run_dqj(
    h: OperatorMatrix,
    jumps: JumpOperatorSet,
    psi0: StateVector,
    total_time: float,
    order: int,
    n_grid: int,
    cfg: PropagationConfig,
    record_at: Sequence[float],
) -> list[JumpOrderContribution]:
    """Propagate all deterministic jump trajectories up to ``order`` jumps.

    Returns one contribution per jump order 0..order. Shared trajectory
    prefixes are propagated once: every column of the wavefront is the
    unnormalized continuation of one prefix, children split off at their
    jump time with the jump weight recorded from the unnormalized parent.
    Annihilated trajectories (jump weight below threshold) are dropped with
    zero weight together with their descendants.
    """
    if order not in (1, 2, 3):
        raise InvalidOrder(f"jump order must be 1, 2 or 3, got {order}")
    if abs(squared_norm(psi0) - 1.0) > 1e-10:
        raise ValueError("psi0 must be unit-norm")
    record = sorted(set(float(t) for t in record_at))
    if record and (record[0] <= 0.0 or record[-1] > total_time):
        raise ValueError("record_at times must lie within (0, T]")

    heff = build_effective_hamiltonian(h, jumps)
    dim = heff.dim
    if psi0.dim != dim:
        raise ValueError(f"dimension mismatch: state {psi0.dim}, H_eff {dim}")
    n_j = jumps.count
    jump_mats = [op.entries for op in jumps.operators]

    grids = [build_grid(n, total_time, n_grid) for n in range(1, order + 1)]
    tables = _build_node_tables(grids, n_j, n_grid, total_time) if n_j else [
        _NodeTable(depth=k) for k in range(1, order + 1)
    ]

    tick_unit = total_time / (12 * n_grid)
    final_tick = 12 * n_grid

    def t_of(q: int) -> float:
        return total_time if q == final_tick else q * tick_unit

    # spawn schedule grouped by time
    spawn_at: dict[float, list[tuple[int, int]]] = {}
    for table in tables:
        for i, ticks in enumerate(table.ticks):
            spawn_at.setdefault(t_of(ticks[-1]), []).append((table.depth, i))

    events = sorted(set(spawn_at) | set(record) | {total_time})
    record_set = set(record)

    n_cols = 1 + sum(len(t) for t in tables)
    work = [
        np.zeros((dim, n_cols), dtype=np.complex128, order="F"),
        np.zeros((dim, n_cols), dtype=np.complex128, order="F"),
    ]
    cur = 0
    work[cur][:, 0] = psi0.amplitudes
    m_active = 1

    for table in tables:
        table.w_prod = np.zeros(len(table), dtype=np.float64)
        table.col = np.full(len(table), -1, dtype=np.int64)

    cache = StepCache(heff.generator())
    snapshots: dict[float, tuple[int, np.ndarray]] = {}
    n_dead = 0

    t_cur = 0.0
    for t_next in events:
        # advance all active columns, norm checked per substep
        n2_prev = _norms2(work[cur][:, :m_active])
        for dt in split_steps(t_next - t_cur, cfg.h):
            np.matmul(cache.matrix(dt), work[cur][:, :m_active],
                      out=work[1 - cur][:, :m_active])
            cur = 1 - cur
            n2 = _norms2(work[cur][:, :m_active])
            if np.any(n2 > n2_prev * (1.0 + 1e-10)):
                raise RuntimeError(
                    f"squared norm grew on a substep near t={t_next:g}; reduce h"
                )
            n2_prev = n2
        t_cur = t_next

        # spawn children whose jump time is t_next, batched per operator
        for j in range(n_j):
            batch: list[tuple[int, int]] = []
            batch_cols: list[int] = []
            for depth, i in spawn_at.get(t_next, ()):
                table = tables[depth - 1]
                if table.op[i] != j:
                    continue
                parent = table.parent[i]
                p_col = 0 if parent < 0 else int(tables[depth - 2].col[parent])
                if p_col < 0:  # dead ancestor: never spawns
                    n_dead += 1
                    continue
                batch.append((depth, i))
                batch_cols.append(p_col)
            if not batch:
                continue
            parents = work[cur][:, np.asarray(batch_cols)]
            jumped = jump_mats[j] @ parents
            weights = _norms2(jumped)
            parent_n2 = _norms2(parents)
            for b, (depth, i) in enumerate(batch):
                table = tables[depth - 1]
                w = float(weights[b])
                if w <= EPS_NORM * float(parent_n2[b]):
                    n_dead += 1
                    continue
                parent = table.parent[i]
                w_up = 1.0 if parent < 0 else tables[depth - 2].w_prod[parent]
                work[cur][:, m_active] = jumped[:, b] / math.sqrt(w)
                table.col[i] = m_active
                table.w_prod[i] = w_up * w
                m_active += 1

        if t_next in record_set:
            snapshots[t_next] = (m_active, work[cur][:, :m_active].copy())

    final = work[cur][:, :m_active]
    p0 = float(np.vdot(final[:, 0], final[:, 0]).real)
    if n_dead:
        logger.info("dropped %d annihilated trajectories (zero weight)", n_dead)

    # per-node probabilities: grid weight * jump-weight product * trailing
    # survival factor; the highest order carries no trailing factor.
    node_p: list[np.ndarray] = []
    node_times: list[np.ndarray] = []
    node_anc: list[np.ndarray] = []
    for table in tables:
        gw = np.asarray(table.grid_weight)
        alive = table.col >= 0 if len(table) else np.zeros(0, dtype=bool)
        trail = np.ones(len(table))
        if table.depth < order and len(table):
            cols = np.where(alive, table.col, 0)
            trail = np.where(alive, _norms2(final[:, cols]), 0.0)
        p = np.where(alive, gw * table.w_prod * trail, 0.0)
        node_p.append(p)
        ticks_arr = (
            np.asarray(table.ticks, dtype=np.int64)
            if len(table)
            else np.zeros((0, table.depth), dtype=np.int64)
        )
        times_arr = np.where(ticks_arr == final_tick, total_time, ticks_arr * tick_unit)
        node_times.append(times_arr)
        node_anc.append(
            np.asarray(table.ancestors, dtype=np.int64)
            if len(table)
            else np.zeros((0, table.depth), dtype=np.int64)
        )

    contribs: list[JumpOrderContribution] = []
    ws0: dict[float, np.ndarray] = {}
    ws_n: list[dict[float, np.ndarray]] = [dict() for _ in range(order)]
    for t in record:
        m_t, amps = snapshots[t]
        n2_t = _norms2(amps)
        ws0[t] = (p0 / n2_t[0]) * np.outer(amps[:, 0], amps[:, 0].conj())
        for n in range(1, order + 1):
            table = tables[n - 1]
            p = node_p[n - 1]
            sel = np.flatnonzero(p > 0.0)
            acc = np.zeros((dim, dim), dtype=np.complex128)
            if sel.size:
                # prefix depth of each trajectory at time t
                d_t = (node_times[n - 1][sel] <= t).sum(axis=1)
                col_w = np.zeros(m_t)
                for d in range(0, n + 1):
                    dsel = sel[d_t == d]
                    if not dsel.size:
                        continue
                    if d == 0:
                        col_w[0] += p[dsel].sum()
                    else:
                        anc = node_anc[n - 1][dsel, d - 1]
                        np.add.at(col_w, tables[d - 1].col[anc], p[dsel])
                nz = np.flatnonzero(col_w > 0.0)
                acc = (amps[:, nz] * (col_w[nz] / n2_t[nz])) @ amps[:, nz].conj().T
            ws_n[n - 1][t] = acc

    contribs.append(
        JumpOrderContribution(order=0, weighted_sum=ws0, norm_constant=p0, p0=p0)
    )
    for n in range(1, order + 1):
        contribs.append(
            JumpOrderContribution(
                order=n,
                weighted_sum=ws_n[n - 1],
                norm_constant=float(node_p[n - 1].sum()),
            )
        )
    return contribs


def assemble_density(
    contributions: Sequence[JumpOrderContribution], order: int
) -> DensityMatrixSeries:
    """Trace-preserving combination of the jump-order contributions.

    rho(t) = p0 rho0(t) + (1 - p0) / (N_1 + ... + N_order) * sum_n ws_n(t).
    """
    by_order = {c.order: c for c in contributions}
    if set(by_order) < set(range(order + 1)):
        raise ValueError(f"contributions must cover orders 0..{order}")
    zero = by_order[0]
    if zero.p0 is None:
        raise ValueError("order-0 contribution lacks p0")
    p0 = zero.p0
    total_norm = math.fsum(by_order[n].norm_constant for n in range(1, order + 1))
    residual = 1.0 - p0

    times = sorted(zero.weighted_sum)
    out: list[DensityMatrix] = []
    if total_norm <= EPS_NORM:
        if residual > _PURE_TOL:
            raise DegenerateNormalization(
                f"jump probability {residual:.3e} but no surviving jump trajectories"
            )
        for t in times:
            rho = zero.weighted_sum[t] / p0
            out.append(DensityMatrix(0.5 * (rho + rho.conj().T)))
    else:
        scale = residual / total_norm
        for t in times:
            rho = zero.weighted_sum[t].copy()
            for n in range(1, order + 1):
                rho += scale * by_order[n].weighted_sum[t]
            out.append(DensityMatrix(0.5 * (rho + rho.conj().T)))
    return DensityMatrixSeries(times=tuple(times), states=tuple(out))


def decay_strength_bound(jumps: JumpOperatorSet, dim: int | None = None) -> float:
    """Largest eigenvalue of sum L^dag L: bounds <L^dag L> over unit states."""
    decay = jumps.total_decay(dim=dim)
    return float(np.linalg.eigvalsh(decay).max()) if decay.size else 0.0


def liouvillian_norm_bound(h: OperatorMatrix, jumps: JumpOperatorSet) -> float:
    """2 ||H_eff|| + ||sum L^dag L|| via Hermitian eigendecompositions.

    ||H_eff|| is bounded by ||H|| + (1/2) ||sum L^dag L||, so the returned
    value is 2 ||H|| + 2 ||sum L^dag L||.
    """
    h_norm = float(np.abs(np.linalg.eigvalsh(h.entries)).max())
    d_norm = decay_strength_bound(jumps, dim=h.dim)
    return 2.0 * h_norm + 2.0 * d_norm


def error_bound_order1(
    l0: float,
    lv_norm_bound: float,
    z_min: float,
    p0: float,
    total_time: float,
    n_grid: int,
) -> float:
    """Upper bound on the spectral-norm error of the order-1 reconstruction.

    (1 - p0) * (1 + 8/z_min) * l0 * ||Lv||^2 * T^3 / (24 n_grid^2); at
    z_min = 1 (the weakly dissipative limit where the no-jump probability
    stays near one) the prefactor reduces to 3/8.
    """
    if min(l0, lv_norm_bound, total_time) <= 0 or n_grid < 1:
        raise ValueError("l0, lv_norm_bound, total_time must be positive, n_grid >= 1")
    if not 0.0 < z_min <= 1.0:
        raise ValueError("z_min must lie in (0, 1]")
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    prefactor = (1.0 + 8.0 / z_min) / 24.0
    return (1.0 - p0) * prefactor * l0 * lv_norm_bound**2 * total_time**3 / n_grid**2


def poisson_plateau(
    gamma_eff: float, total_time: float, order: int, squared: bool = False
) -> float:
    """Leading-order tail probability of seeing more than ``order`` jumps.

    Pr(#jumps > n) = (gamma_eff T)^(n+1) / (n+1)! for a Poisson process;
    squared when estimating the infidelity floor of a full-rank state.
    """
    if gamma_eff < 0 or total_time < 0:
        raise ValueError("gamma_eff and total_time must be nonnegative")
    if gamma_eff * total_time >= 1.0:
        raise ValueError("gamma_eff * T must be < 1 (weakly dissipative regime)")
    tail = (gamma_eff * total_time) ** (order + 1) / math.factorial(order + 1)
    return tail * tail if squared else tail
