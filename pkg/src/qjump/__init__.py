"""Quantum jump unravelings for weakly dissipative Lindblad dynamics.

Deterministic jump-time grids (orders 1-3), an adapted stochastic baseline,
a master-equation reference integrator, benchmark models and error metrics.
"""

__version__ = "0.1.0"

from .dqj import (
    DegenerateNormalization,
    GridPoint,
    InvalidOrder,
    JumpOrderContribution,
    JumpTimeGrid,
    TrajectorySpec,
    assemble_density,
    build_grid,
    count_trajectories,
    decay_strength_bound,
    error_bound_order1,
    liouvillian_norm_bound,
    poisson_plateau,
    run_dqj,
    trajectory_specs,
)
from .lindblad import LindbladSystem, integrate_master, lindblad_rhs
from .metrics import (
    DegenerateWindow,
    NotADensityMatrix,
    ObservableSeries,
    ScalingFit,
    fidelity,
    fit_loglog_slope,
    observable_trace,
    spectrum,
)
from .models import (
    ModelInstance,
    TruncationTooSmall,
    build_kerr,
    build_test_qubit,
    build_tfim,
    coherent_state,
    lowering_operator,
)
from .propagation import (
    EffectiveHamiltonian,
    InvalidInterval,
    NormGrowthError,
    PropagationConfig,
    SegmentResult,
    apply_jump,
    build_effective_hamiltonian,
    propagate_segment,
)
from .sqj import (
    AllAnnihilated,
    SqjConfig,
    SqjResult,
    SqjTrajectory,
    assemble_sqj,
    choose_jump_operator,
    find_jump_time,
    run_sqj,
)
from .states import (
    EPS_NORM,
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
