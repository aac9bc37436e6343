"""Fidelity, observable traces, quadrature spectra and scaling-slope fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .states import DensityMatrix, DensityMatrixSeries, OperatorMatrix

_VALIDITY_TRACE_TOL = 1e-6
_VALIDITY_EIG_TOL = 1e-6
_IMAG_RESIDUE_TOL = 1e-9


class NotADensityMatrix(ValueError):
    """Fidelity argument fails the trace/positivity validity gate."""


class DegenerateWindow(ValueError):
    """Scaling-fit window has fewer than three points."""


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    """Real or complex expectation values on strictly increasing times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values)
        if times.ndim != 1 or values.shape != times.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    window: tuple[int, int]
    residual: float


def _validate_density(rho: DensityMatrix, name: str) -> np.ndarray:
    mat = rho.entries
    if abs(mat.trace() - 1.0) > _VALIDITY_TRACE_TOL:
        raise NotADensityMatrix(f"{name}: trace deviates from 1 beyond tolerance")
    lo = float(np.linalg.eigvalsh(mat).min())
    if lo < -_VALIDITY_EIG_TOL:
        raise NotADensityMatrix(f"{name}: min eigenvalue {lo:.3e} below tolerance")
    return mat


def fidelity(sigma: DensityMatrix, rho: DensityMatrix) -> float:
    """(Tr sqrt(sqrt(sigma) rho sqrt(sigma)))^2, clamped to [0, 1].

    Evaluated via Hermitian eigendecompositions with eigenvalues clamped at
    zero before square roots; assembled matrices carry grid-error-sized
    negative eigenvalues that would otherwise poison the square root.
    """
    s = _validate_density(sigma, "sigma")
    r = _validate_density(rho, "rho")
    if s.shape != r.shape:
        raise ValueError("density matrices must share a dimension")
    vals, vecs = np.linalg.eigh(s)
    sqrt_s = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
    inner = sqrt_s @ r @ sqrt_s
    inner = 0.5 * (inner + inner.conj().T)
    roots = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None))
    return float(min(1.0, max(0.0, roots.sum() ** 2)))


def observable_trace(series: DensityMatrixSeries, op: OperatorMatrix) -> ObservableSeries:
    """trace(rho(t) O) per recorded time; real-valued for Hermitian O."""
    if len(series) and series.states[0].dim != op.dim:
        raise ValueError("operator dimension does not match the series")
    raw = np.array([np.trace(state.entries @ op.entries) for state in series.states])
    hermitian = np.max(np.abs(op.entries - op.entries.conj().T)) <= 1e-12
    if hermitian:
        residue = float(np.max(np.abs(raw.imag))) if len(raw) else 0.0
        if residue > _IMAG_RESIDUE_TOL:
            raise ValueError(f"imaginary residue {residue:.3e} for a Hermitian observable")
        raw = raw.real
    return ObservableSeries(times=np.asarray(series.times), values=raw)


def spectrum(series: ObservableSeries, omega: float) -> complex:
    """Finite-time Fourier amplitude: trapezoidal rule for
    integral_0^T <X(t)> exp(-i omega t) dt on the recorded grid."""
    t = series.times
    f = series.values * np.exp(-1j * omega * t)
    return complex(np.sum(0.5 * np.diff(t) * (f[1:] + f[:-1])))


def fit_loglog_slope(
    xs, ys, window: tuple[int, int] | None = None
) -> ScalingFit:
    """Least-squares line through (log x, log y) over an index window.

    The window is explicit caller input: the onset of asymptotic scaling is
    model-dependent and must not be guessed automatically.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    if np.any(ys <= 0):
        raise ValueError("ys must be positive")
    lo, hi = window if window is not None else (0, len(xs))
    if hi - lo < 3:
        raise DegenerateWindow("scaling window must contain at least 3 points")
    lx, ly = np.log(xs[lo:hi]), np.log(ys[lo:hi])
    (slope, intercept), res = np.polyfit(lx, ly, 1, full=True)[:2]
    residual = float(np.sqrt(res[0] / len(lx))) if len(res) else 0.0
    return ScalingFit(slope=float(slope), intercept=float(intercept),
                      window=(lo, hi), residual=residual)
