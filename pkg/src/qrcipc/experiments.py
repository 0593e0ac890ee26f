"""Multi-realization parameter sweeps, convergence runs and memory curves."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__, linalg
from .errors import ValidationError
from .ipc import CapacityReport, WindowPolicy, aggregate_realizations, ipc_profile
from .reservoir import (
    ConvergenceTrace,
    InputSequence,
    ObservableSet,
    Reservoir,
    ReservoirConfig,
    convergence_trace,
)

log = logging.getLogger(__name__)

DATASET_SCHEMA = "qrcipc.figure_dataset/1"
CONVERGENCE_SCHEMA = "qrcipc.convergence/1"

SWEEP_AXES = {
    "dt": "dt",
    "n_qubits": "n_qubits",
    "virtual_nodes": "virtual_nodes",
    "field_h": "field_h",
    "coupling_scale": "coupling_scale",
    "observable_set": "observables",
}


@dataclass(frozen=True)
class IPCSettings:
    d_max: int = 9
    policy: WindowPolicy = field(default_factory=WindowPolicy)
    n_surrogates: int = 10
    samples_per_degree: int = 50
    threshold_factor: float = 1.2
    estimator: str = "leverage"
    coverage: float = 0.1

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "coverage": self.coverage,
            "d_max": self.d_max,
            "policy": self.policy.to_dict(),
            "n_surrogates": self.n_surrogates,
            "samples_per_degree": self.samples_per_degree,
            "threshold_factor": self.threshold_factor,
        }


def derive_seeds(master_seed: int, key: str, realization: int) -> Tuple[int, int, int]:
    """Coupling, input and surrogate seeds for one realization.

    Seeds depend only on ``(master_seed, key, realization)`` where ``key``
    names the sweep point, so adding points never perturbs existing ones.
    """
    words = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(key.encode("utf-8")), int(realization)]
    state = np.random.SeedSequence(words).generate_state(3, dtype=np.uint64)
    return tuple(int(s) for s in state)


def run_realization(
    config: ReservoirConfig,
    length: int,
    washout: int,
    input_seed: int,
    surrogate_seed: int,
    settings: Optional[IPCSettings] = None,
) -> CapacityReport:
    """Simulate one coupling realization and profile its IPC."""
    settings = settings or IPCSettings()
    inputs = InputSequence.uniform(length + washout, input_seed)
    t0 = time.perf_counter()
    X = Reservoir(config).run(inputs, washout)
    t1 = time.perf_counter()
    report = ipc_profile(
        X,
        inputs,
        d_max=settings.d_max,
        policy=settings.policy,
        n_surrogates=settings.n_surrogates,
        samples_per_degree=settings.samples_per_degree,
        threshold_factor=settings.threshold_factor,
        surrogate_seed=surrogate_seed,
        estimator=settings.estimator,
        coverage=settings.coverage,
        metadata={
            "config": config.to_dict(),
            "input_seed": int(input_seed),
            "coupling_seed": int(config.coupling_seed),
        },
    )
    report.metadata["seconds"] = {"simulate": t1 - t0, "ipc": time.perf_counter() - t1}
    return report


def apply_axis(base: ReservoirConfig, axis: str, value) -> ReservoirConfig:
    if axis not in SWEEP_AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    if axis == "observable_set":
        value = ObservableSet.parse(value) if isinstance(value, str) else value
    return dataclasses.replace(base, **{SWEEP_AXES[axis]: value})


@dataclass(frozen=True)
class SweepPlan:
    base: ReservoirConfig
    axis: str
    values: Sequence
    realizations: int = 10
    length: int = 20_000
    washout: int = 1_000

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValidationError(f"unknown sweep axis {self.axis!r}")
        if not list(self.values):
            raise ValidationError("sweep values must be non-empty")
        if self.realizations < 1:
            raise ValidationError("realizations must be >= 1")
        if self.length < 1 or self.washout < 0:
            raise ValidationError("length must be >= 1 and washout >= 0")


@dataclass
class FigureDataset:
    """Plot-ready aggregate of a sweep: one entry per axis value."""

    experiment: str
    axis: str
    points: List[dict]
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "experiment": self.experiment,
            "axis": self.axis,
            "points": self.points,
            "provenance": self.provenance,
        }

    def csv_rows(self) -> List[List[str]]:
        rows = [[
            "axis_value", "degree", "mean", "std", "total_mean", "total_std",
            "normalized_mean", "normalized_std", "n_vars", "realizations",
        ]]
        for p in self.points:
            if p.get("error"):
                continue
            s = p["summary"]
            for d in sorted(s["degree_mean"], key=int):
                rows.append([
                    str(p["value"]), d, repr(s["degree_mean"][d]), repr(s["degree_std"][d]),
                    repr(s["total_mean"]), repr(s["total_std"]),
                    repr(s["normalized_mean"]), repr(s["normalized_std"]),
                    str(p["n_vars"]), str(s["count"]),
                ])
        return rows

    def point(self, value) -> dict:
        for p in self.points:
            if p["value"] == value:
                return p
        raise KeyError(value)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _sweep_task(args):
    config, length, washout, seeds, settings = args
    coupling_seed, input_seed, surrogate_seed = seeds
    config = dataclasses.replace(config, coupling_seed=coupling_seed)
    return run_realization(config, length, washout, input_seed, surrogate_seed, settings)


def run_sweep(
    plan: SweepPlan,
    master_seed: int = 0,
    settings: Optional[IPCSettings] = None,
    workers: int = 1,
    experiment: str = "sweep",
    progress: Optional[Callable[[str], None]] = None,
) -> FigureDataset:
    """Run every (axis value, realization) pair and aggregate per axis value.

    A failing axis value is recorded with its error; the others proceed.
    """
    settings = settings or IPCSettings()
    tasks, keys = [], []
    points: Dict[int, dict] = {}
    for i, value in enumerate(plan.values):
        key = f"{plan.axis}={value!r}"
        try:
            config = apply_axis(plan.base, plan.axis, value)
        except Exception as exc:  # noqa: BLE001 - recorded per point
            points[i] = {"value": value, "error": f"{type(exc).__name__}: {exc}"}
            continue
        points[i] = {"value": value, "n_vars": config.n_vars, "realizations": []}
        for r in range(plan.realizations):
            tasks.append((config, plan.length, plan.washout, derive_seeds(master_seed, key, r), settings))
            keys.append((i, r))

    results: Dict[Tuple[int, int], object] = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {k: pool.submit(_sweep_task, t) for k, t in zip(keys, tasks)}
            for k, fut in futures.items():
                try:
                    results[k] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    results[k] = exc
    else:
        for k, t in zip(keys, tasks):
            try:
                results[k] = _sweep_task(t)
            except Exception as exc:  # noqa: BLE001
                results[k] = exc
            if progress:
                progress(f"{plan.axis}={plan.values[k[0]]!r} realization {k[1]} done")

    for i in sorted(points):
        p = points[i]
        if "error" in p:
            continue
        reports = []
        for r in range(plan.realizations):
            res = results[(i, r)]
            if isinstance(res, Exception):
                p["error"] = f"realization {r}: {type(res).__name__}: {res}"
                log.warning("sweep point %s=%r failed: %s", plan.axis, p["value"], res)
                break
            reports.append(res)
        if "error" in p:
            p.pop("realizations", None)
            continue
        summary = aggregate_realizations(reports)
        p["summary"] = summary.to_dict()
        p["realizations"] = [
            {
                "config": rep.metadata["config"],
                "input_seed": rep.metadata["input_seed"],
                "threshold": rep.threshold,
                "total": rep.total,
                "normalized_total": rep.normalized_total,
                "per_degree_totals": {str(d): v for d, v in sorted(rep.per_degree_totals.items())},
                "truncated_degrees": rep.truncated_degrees,
            }
            for rep in reports
        ]

    plan_dict = {
        "base": plan.base.to_dict(),
        "axis": plan.axis,
        "values": list(plan.values),
        "realizations": plan.realizations,
        "length": plan.length,
        "washout": plan.washout,
        "ipc": settings.to_dict(),
    }
    provenance = {
        "master_seed": int(master_seed),
        "plan": plan_dict,
        "config_hash": config_hash(plan_dict),
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seed_derivation": "SeedSequence([master_seed, crc32(f'{axis}={value!r}'), realization])",
    }
    return FigureDataset(experiment, plan.axis, [points[i] for i in sorted(points)], provenance)


@dataclass
class ConvergenceDataset:
    traces: List[ConvergenceTrace]
    provenance: dict

    def to_dict(self, tol: float = 1e-4) -> dict:
        return {
            "schema": CONVERGENCE_SCHEMA,
            "provenance": self.provenance,
            "traces": [
                {
                    "dt": t.dt,
                    "inputs_to_tolerance": t.inputs_to_reach(tol),
                    "tolerance": tol,
                    "distances": t.distances.tolist(),
                }
                for t in self.traces
            ],
        }

    def csv_rows(self) -> List[List[str]]:
        rows = [["dt", "inputs", "time", "distance"]]
        for t in self.traces:
            for k, (n, tt, dist) in enumerate(zip(t.inputs, t.times, t.distances)):
                rows.append([repr(t.dt), str(int(n)), repr(float(tt)), repr(float(dist))])
        return rows

    def trace(self, dt: float) -> ConvergenceTrace:
        for t in self.traces:
            if t.dt == dt:
                return t
        raise KeyError(dt)


def run_convergence(
    config: ReservoirConfig,
    dt_values: Sequence[float],
    master_seed: int = 0,
    n_inputs: int = 200,
    rho_a: Optional[np.ndarray] = None,
    rho_b: Optional[np.ndarray] = None,
) -> ConvergenceDataset:
    """Distance between trajectories from ``|0...0>`` and ``|1...1>`` per ``dt``.

    All ``dt`` values share one input sequence and one coupling realization.
    """
    n = config.n_qubits
    rho_a = linalg.basis_state("0" * n) if rho_a is None else rho_a
    rho_b = linalg.basis_state("1" * n) if rho_b is None else rho_b
    _, input_seed, _ = derive_seeds(master_seed, "converge", 0)
    inputs = InputSequence.uniform(n_inputs, input_seed)
    traces = [
        convergence_trace(dataclasses.replace(config, dt=float(dt)), rho_a, rho_b, inputs)
        for dt in dt_values
    ]
    provenance = {
        "master_seed": int(master_seed),
        "config": config.to_dict(),
        "dt_values": [float(d) for d in dt_values],
        "n_inputs": int(n_inputs),
        "input_seed": input_seed,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    return ConvergenceDataset(traces, provenance)


def linear_memory_curve(report: CapacityReport, bare: bool = False) -> List[Tuple[int, float]]:
    """Degree-1 capacity per delay, ordered by delay.

    Below-threshold capacities count as zero unless ``bare`` is set, so the
    curve sums to the report's degree-1 total.
    """
    curve = [
        (r.spec.delays[0], r.capacity if (bare or r.above_threshold) else 0.0)
        for r in report.records
        if r.degree == 1
    ]
    return sorted(curve)
