"""Benchmark orchestration: JSON configs, runs, sweeps, CSV/JSON emission.

The CLI produces tidy result rows (one metric value per row) for any
plotting tool; no plots are generated here. Metric values are always
measured against the master-equation reference, which is computed once per
(model, time horizon, substep, recording) combination and cached across a
sweep.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, replace
from typing import Any, Sequence

import numpy as np

from . import __version__
from .dqj import (
    DegenerateNormalization,
    assemble_density,
    count_trajectories,
    run_dqj,
)
from .lindblad import LindbladSystem, integrate_master
from .metrics import ObservableSeries, fidelity, observable_trace, spectrum
from .models import ModelInstance, build_kerr, build_test_qubit, build_tfim
from .propagation import NormGrowthError, PropagationConfig
from .sqj import AllAnnihilated, SqjConfig, assemble_sqj, run_sqj
from .states import (
    DensityMatrixSeries,
    NormUnderflow,
    expectation,
    outer_product_normalized,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

CSV_COLUMNS = (
    "method", "order", "n_grid", "n_traj", "model", "gamma", "T",
    "metric", "value", "stderr", "wallclock_s", "seed", "version",
)

_MODEL_KEYS = {
    "tfim": {"n_qubits", "g", "j_coupling", "gamma"},
    "kerr": {"n_fock", "omega0", "omega_k", "gamma", "alpha"},
    "test_qubit": {"variant", "gamma", "omega"},
}
_METHOD_KEYS = {
    "dqj": {"order", "n_grid"},
    "sqj": {"n_traj", "seed", "bisection_tol"},
    "lindblad": set(),
}
_SWEEP_AXES = ("n_grid", "n_traj", "gamma", "n_qubits")


class ConfigError(ValueError):
    """Configuration rejected; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    method: dict
    total_time: float
    recording: dict
    substep: dict
    metric: str
    output: str | None = None
    sweep: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "model": dict(self.model),
            "method": dict(self.method),
            "T": self.total_time,
            "recording": dict(self.recording),
            "substep": dict(self.substep),
            "metric": self.metric,
        }
        if self.output is not None:
            out["output"] = self.output
        if self.sweep is not None:
            out["sweep"] = dict(self.sweep)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return validate_config(raw)


@dataclass(frozen=True)
class ResultRow:
    method: str
    order: int | None
    n_grid: int | None
    n_traj: int
    model: str
    gamma: float
    total_time: float
    metric: str
    value: float
    stderr: float | None
    wallclock_s: float
    seed: int | None
    version: str


def _require(cond: bool, field: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {msg}")


def _check_keys(block: dict, allowed: set[str], required: set[str], field: str) -> None:
    unknown = set(block) - allowed
    _require(not unknown, field, f"unknown keys {sorted(unknown)}")
    missing = required - set(block)
    _require(not missing, field, f"missing keys {sorted(missing)}")


def validate_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON config; unknown keys anywhere are rejected."""
    _require(isinstance(raw, dict), "config", "must be a JSON object")
    _check_keys(
        raw,
        {"model", "method", "T", "recording", "substep", "metric", "output", "sweep"},
        {"model", "method", "T", "metric"},
        "config",
    )
    total_time = raw["T"]
    _require(isinstance(total_time, (int, float)) and total_time > 0, "T", "must be > 0")
    total_time = float(total_time)

    model = dict(raw["model"])
    kind = model.get("kind")
    _require(kind in _MODEL_KEYS, "model.kind", f"must be one of {sorted(_MODEL_KEYS)}")
    allowed = _MODEL_KEYS[kind] | {"kind"}
    required = {"kind"} | (_MODEL_KEYS[kind] - ({"omega"} if kind == "test_qubit" else set()))
    _check_keys(model, allowed, required, "model")
    if kind == "tfim":
        _require(isinstance(model["n_qubits"], int) and 2 <= model["n_qubits"] <= 5,
                 "model.n_qubits", "must be an integer in 2..5")
    if kind == "kerr":
        _require(isinstance(model["n_fock"], int) and model["n_fock"] >= 2,
                 "model.n_fock", "must be an integer >= 2")
        alpha = model["alpha"]
        ok = isinstance(alpha, (int, float)) or (
            isinstance(alpha, list) and len(alpha) == 2
            and all(isinstance(x, (int, float)) for x in alpha)
        )
        _require(ok, "model.alpha", "must be a number or a [re, im] pair")
    if kind == "test_qubit":
        _require(model["variant"] in ("dark", "rabi"), "model.variant",
                 "must be 'dark' or 'rabi'")
    _require(isinstance(model.get("gamma"), (int, float)) and model["gamma"] >= 0,
             "model.gamma", "must be a nonnegative number")

    method = dict(raw["method"])
    mkind = method.get("kind")
    _require(mkind in _METHOD_KEYS, "method.kind", f"must be one of {sorted(_METHOD_KEYS)}")
    if mkind == "dqj":
        _check_keys(method, {"kind", "order", "n_grid"}, {"kind", "order", "n_grid"}, "method")
        _require(method["order"] in (1, 2, 3), "method.order", "must be 1, 2 or 3")
        _require(isinstance(method["n_grid"], int) and method["n_grid"] >= 1,
                 "method.n_grid", "must be an integer >= 1")
    elif mkind == "sqj":
        _check_keys(method, {"kind", "n_traj", "seed", "bisection_tol"},
                    {"kind", "n_traj", "seed"}, "method")
        _require(isinstance(method["n_traj"], int) and method["n_traj"] >= 1,
                 "method.n_traj", "must be an integer >= 1")
        _require(isinstance(method["seed"], int) and 0 <= method["seed"] < 2**64,
                 "method.seed", "must be a 64-bit unsigned integer")
    else:
        _check_keys(method, {"kind"}, {"kind"}, "method")

    recording = dict(raw.get("recording", {"kind": "grid"}))
    rkind = recording.get("kind")
    _require(rkind in ("grid", "final", "times"), "recording.kind",
             "must be 'grid', 'final' or 'times'")
    if rkind == "grid":
        _check_keys(recording, {"kind", "n"}, {"kind"}, "recording")
        if "n" in recording:
            _require(isinstance(recording["n"], int) and recording["n"] >= 1,
                     "recording.n", "must be an integer >= 1")
        else:
            _require(mkind == "dqj", "recording.n",
                     "required unless the method is dqj (defaults to n_grid)")
    elif rkind == "times":
        _check_keys(recording, {"kind", "times"}, {"kind", "times"}, "recording")
        times = recording["times"]
        ok = (isinstance(times, list) and times
              and all(isinstance(t, (int, float)) for t in times)
              and all(b > a for a, b in zip(times, times[1:]))
              and 0 < times[0] and times[-1] <= total_time)
        _require(ok, "recording.times",
                 "must be strictly increasing numbers within (0, T]")
    else:
        _check_keys(recording, {"kind"}, {"kind"}, "recording")

    substep = dict(raw.get("substep", {"div": 20}))
    _check_keys(substep, {"div", "h"}, set(), "substep")
    _require(len(substep) == 1, "substep", "must contain exactly one of 'div' or 'h'")
    if "div" in substep:
        _require(isinstance(substep["div"], int) and substep["div"] >= 1,
                 "substep.div", "must be an integer >= 1")
        _require(mkind == "dqj" or rkind == "grid", "substep.div",
                 "needs a grid to divide; give an explicit substep.h instead")
    else:
        _require(isinstance(substep["h"], (int, float)) and substep["h"] > 0,
                 "substep.h", "must be > 0")

    metric = raw["metric"]
    ok = metric == "fidelity_vs_lindblad" or (
        isinstance(metric, str) and metric.startswith(("observable:", "spectrum:"))
    )
    _require(ok, "metric",
             "must be 'fidelity_vs_lindblad', 'observable:<name>' or 'spectrum:<omega>'")
    if isinstance(metric, str) and metric.startswith("spectrum:"):
        try:
            float(metric.split(":", 1)[1])
        except ValueError:
            raise ConfigError("metric: spectrum frequency must be a number") from None

    output = raw.get("output")
    _require(output is None or isinstance(output, str), "output", "must be a string path")

    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = dict(sweep)
        _check_keys(sweep, {"axis", "values", "repeats"}, {"axis", "values"}, "sweep")
        _require(sweep["axis"] in _SWEEP_AXES, "sweep.axis",
                 f"must be one of {_SWEEP_AXES}")
        _require(isinstance(sweep["values"], list) and sweep["values"],
                 "sweep.values", "must be a nonempty list")
        if "repeats" in sweep:
            _require(isinstance(sweep["repeats"], int) and sweep["repeats"] >= 1,
                     "sweep.repeats", "must be an integer >= 1")
        axis = sweep["axis"]
        _require(axis != "n_grid" or mkind == "dqj", "sweep.axis",
                 "n_grid sweeps require the dqj method")
        _require(axis != "n_traj" or mkind == "sqj", "sweep.axis",
                 "n_traj sweeps require the sqj method")
        _require(axis != "n_qubits" or kind == "tfim", "sweep.axis",
                 "n_qubits sweeps require the tfim model")

    return ExperimentConfig(
        model=model, method=method, total_time=total_time, recording=recording,
        substep=substep, metric=metric, output=output, sweep=sweep,
    )


def _build_model(cfg: ExperimentConfig) -> ModelInstance:
    m = cfg.model
    if m["kind"] == "tfim":
        return build_tfim(m["n_qubits"], float(m["g"]), float(m["j_coupling"]),
                          float(m["gamma"]))
    if m["kind"] == "kerr":
        alpha = m["alpha"]
        alpha = complex(alpha[0], alpha[1]) if isinstance(alpha, list) else complex(alpha)
        return build_kerr(m["n_fock"], float(m["omega0"]), float(m["omega_k"]),
                          float(m["gamma"]), alpha)
    return build_test_qubit(m["variant"], float(m["gamma"]), float(m.get("omega", 0.0)))


def _recording_times(cfg: ExperimentConfig) -> tuple[float, ...]:
    rec = cfg.recording
    total = cfg.total_time
    if rec["kind"] == "final":
        return (total,)
    if rec["kind"] == "times":
        return tuple(float(t) for t in rec["times"])
    n = rec.get("n", cfg.method.get("n_grid"))
    return tuple(k * total / n for k in range(1, n + 1))


def _substep_h(cfg: ExperimentConfig, rec_times: tuple[float, ...]) -> float:
    if "h" in cfg.substep:
        return float(cfg.substep["h"])
    div = cfg.substep["div"]
    if cfg.method["kind"] == "dqj":
        return cfg.total_time / cfg.method["n_grid"] / div
    return cfg.total_time / len(rec_times) / div


class LindbladCache:
    """Caches master-equation reference series; counts actual integrations."""

    def __init__(self):
        self._store: dict[tuple, DensityMatrixSeries] = {}
        self.computations = 0

    def get(self, model: ModelInstance, total_time: float,
            rec_times: tuple[float, ...], h_step: float) -> DensityMatrixSeries:
        key = (model.label, total_time, rec_times, h_step)
        series = self._store.get(key)
        if series is None:
            sys_ = LindbladSystem(
                h=model.h, jumps=model.jumps,
                rho0=outer_product_normalized(model.psi0),
            )
            series = integrate_master(sys_, total_time, rec_times, h_step)
            self._store[key] = series
            self.computations += 1
        return series


def _x_series_with_origin(
    model: ModelInstance, series: DensityMatrixSeries
) -> ObservableSeries:
    """Quadrature series including t=0 (from the pure initial state)."""
    x_op = model.observables["X"]
    tail = observable_trace(series, x_op)
    x0 = expectation(model.psi0, x_op).real
    return ObservableSeries(
        times=np.concatenate(([0.0], tail.times)),
        values=np.concatenate(([x0], tail.values)),
    )


def _metric_value(cfg: ExperimentConfig, model: ModelInstance,
                  series: DensityMatrixSeries, ref: DensityMatrixSeries) -> float:
    if cfg.metric == "fidelity_vs_lindblad":
        t = series.times[-1]
        return fidelity(ref.at(t), series.at(t))
    name, _, arg = cfg.metric.partition(":")
    if name == "observable":
        if arg not in model.observables:
            raise ConfigError(f"metric: model has no observable {arg!r}")
        mine = observable_trace(series, model.observables[arg])
        theirs = observable_trace(ref, model.observables[arg])
        return float(np.max(np.abs(mine.values - theirs.values)))
    if "X" not in model.observables:
        raise ConfigError("metric: spectrum requires a model with an 'X' observable")
    omega = float(arg)
    s_mine = spectrum(_x_series_with_origin(model, series), omega)
    s_ref = spectrum(_x_series_with_origin(model, ref), omega)
    return abs(s_mine) - abs(s_ref)


def run_experiment(
    cfg: ExperimentConfig, cache: LindbladCache | None = None
) -> list[ResultRow]:
    """Run one configured experiment and emit one result row."""
    if cfg.sweep is not None:
        raise ConfigError("sweep: config carries a sweep block; use run_sweep")
    model = _build_model(cfg)
    rec_times = _recording_times(cfg)
    h_step = _substep_h(cfg, rec_times)
    cache = cache if cache is not None else LindbladCache()

    started = time.perf_counter()
    method = cfg.method
    order: int | None = None
    n_grid: int | None = None
    seed: int | None = None
    if method["kind"] == "dqj":
        order, n_grid = method["order"], method["n_grid"]
        contribs = run_dqj(
            model.h, model.jumps, model.psi0, cfg.total_time, order, n_grid,
            PropagationConfig(h=h_step), rec_times,
        )
        series = assemble_density(contribs, order)
        n_traj = count_trajectories(order, n_grid, max(model.jumps.count, 1))
    elif method["kind"] == "sqj":
        seed = method["seed"]
        sqj_cfg = SqjConfig(n_traj=method["n_traj"], seed=seed,
                            bisection_tol=method.get("bisection_tol", 1e-10))
        result = run_sqj(model.h, model.jumps, model.psi0, cfg.total_time,
                         sqj_cfg, rec_times, PropagationConfig(h=h_step))
        series = assemble_sqj(result.p0, result.zero_jump, result.trajectories,
                              rec_times)
        n_traj = method["n_traj"] + 1
    else:
        series = cache.get(model, cfg.total_time, rec_times, h_step)
        n_traj = 0

    ref = cache.get(model, cfg.total_time, rec_times, h_step)
    value = _metric_value(cfg, model, series, ref)
    elapsed = time.perf_counter() - started

    return [ResultRow(
        method=method["kind"], order=order, n_grid=n_grid, n_traj=n_traj,
        model=model.label, gamma=model.gamma, total_time=cfg.total_time,
        metric=cfg.metric, value=float(value), stderr=None,
        wallclock_s=elapsed, seed=seed, version=__version__,
    )]


def _point_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "n_grid":
        return replace(cfg, method={**cfg.method, "n_grid": int(value)}, sweep=None)
    if axis == "n_traj":
        return replace(cfg, method={**cfg.method, "n_traj": int(value)}, sweep=None)
    if axis == "gamma":
        return replace(cfg, model={**cfg.model, "gamma": float(value)}, sweep=None)
    return replace(cfg, model={**cfg.model, "n_qubits": int(value)}, sweep=None)


def run_sweep(
    cfg: ExperimentConfig, cache: LindbladCache | None = None
) -> list[ResultRow]:
    """One row per axis point; sqj points report mean and standard error
    over seed repeats (the stochastic baseline is too variable for single
    seeds to mean anything)."""
    if cfg.sweep is None:
        raise ConfigError("sweep: config lacks a sweep block")
    cache = cache if cache is not None else LindbladCache()
    axis, values = cfg.sweep["axis"], cfg.sweep["values"]
    repeats = cfg.sweep.get("repeats", 16)

    rows: list[ResultRow] = []
    for v in values:
        point = _point_config(cfg, axis, v)
        if point.method["kind"] == "sqj" and repeats > 1:
            base_seed = point.method["seed"]
            started = time.perf_counter()
            vals: list[float] = []
            proto: ResultRow | None = None
            for r in range(repeats):
                seeded = replace(point, method={**point.method, "seed": base_seed + r})
                row = run_experiment(seeded, cache=cache)[0]
                proto = proto if proto is not None else row
                vals.append(row.value)
            elapsed = time.perf_counter() - started
            mean = float(np.mean(vals))
            stderr = float(np.std(vals, ddof=1) / np.sqrt(repeats))
            rows.append(replace(proto, value=mean, stderr=stderr,
                                wallclock_s=elapsed, seed=base_seed))
        else:
            rows.extend(run_experiment(point, cache=cache))
    return rows


def _fmt_float(x: float) -> str:
    return f"{x:.17g}"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return _fmt_float(v)
    return str(v)


def _row_dict(row: ResultRow) -> dict[str, Any]:
    d = asdict(row)
    d["T"] = d.pop("total_time")
    return {k: d[k] for k in CSV_COLUMNS}


def rows_to_text(rows: Sequence[ResultRow], fmt: str) -> str:
    """Serialize rows deterministically; floats carry 17 significant digits."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(v) for v in _row_dict(row).values()])
        return buf.getvalue()
    if fmt == "json":
        items = []
        for row in rows:
            pairs = ", ".join(
                f"{json.dumps(k)}: "
                + ("null" if v is None
                   else _fmt_float(v) if isinstance(v, float)
                   else json.dumps(v))
                for k, v in _row_dict(row).items()
            )
            items.append("  {" + pairs + "}")
        return "[\n" + ",\n".join(items) + "\n]\n"
    raise ConfigError(f"format: unknown output format {fmt!r}")


def emit(rows: Sequence[ResultRow], fmt: str, path: str | None) -> None:
    """Write rows as CSV or JSON; path None prints to stdout."""
    text = rows_to_text(rows, fmt)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _coerce_row(d: dict[str, Any]) -> ResultRow:
    def _int(v):
        return None if v in (None, "") else int(v)

    def _float(v):
        return None if v in (None, "") else float(v)

    return ResultRow(
        method=d["method"], order=_int(d["order"]), n_grid=_int(d["n_grid"]),
        n_traj=int(d["n_traj"]), model=d["model"], gamma=float(d["gamma"]),
        total_time=float(d["T"]), metric=d["metric"], value=float(d["value"]),
        stderr=_float(d["stderr"]), wallclock_s=float(d["wallclock_s"]),
        seed=_int(d["seed"]), version=d["version"],
    )


def read_rows(path: str, fmt: str) -> list[ResultRow]:
    """Parse rows previously written by emit (exact float round-trip)."""
    with open(path, encoding="utf-8") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            return [_coerce_row(d) for d in reader]
        if fmt == "json":
            return [_coerce_row(d) for d in json.load(fh)]
    raise ConfigError(f"format: unknown output format {fmt!r}")


def _parse_int_list(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x]


def _counts_text(orders: list[int], n_grids: list[int], n_js: list[int]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("order", "n_grid", "n_j", "n_traj"))
    for order in orders:
        for n_grid in n_grids:
            for n_j in n_js:
                writer.writerow((order, n_grid, n_j,
                                 count_trajectories(order, n_grid, n_j)))
    return buf.getvalue()


def _load_config(path: str, args) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
    if args.substep_div is not None:
        raw["substep"] = {"div": args.substep_div}
    if args.seed is not None:
        if not (isinstance(raw.get("method"), dict) and raw["method"].get("kind") == "sqj"):
            raise ConfigError("--seed: only meaningful for the sqj method")
        raw["method"]["seed"] = args.seed
    return validate_config(raw)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qjump-bench",
        description="Deterministic/stochastic quantum jump benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--substep-div", type=int, default=None,
                       help="override substep policy with h = dt/div")
        p.add_argument("--seed", type=int, default=None,
                       help="override the sqj seed")
    p_counts = sub.add_parser("counts")
    p_counts.add_argument("--orders", default="1,2,3")
    p_counts.add_argument("--n-grid", default="1..64")
    p_counts.add_argument("--n-j", default="1..5")
    p_counts.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "counts":
            text = _counts_text(_parse_int_list(args.orders),
                                _parse_int_list(args.n_grid),
                                _parse_int_list(args.n_j))
            if args.out is None:
                sys.stdout.write(text)
            else:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            return EXIT_OK

        cfg = _load_config(args.config, args)
        if args.command == "validate":
            print("config ok")
            return EXIT_OK
        rows = run_sweep(cfg) if args.command == "sweep" else run_experiment(cfg)
        emit(rows, args.format, args.out if args.out is not None else cfg.output)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NormUnderflow, DegenerateNormalization, AllAnnihilated,
            NormGrowthError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
