"""Information processing capacity of a harvested design matrix.

Targets are products of Legendre polynomials of the scaled input
``s~ = 2 s - 1`` at several delays. For each target the capacity is the
fraction of its power a least-squares linear readout (with bias) can
reproduce. Summing capacities per total polynomial degree gives the IPC
profile, bounded by the number of linearly independent readout variables.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ValidationError
from .reservoir import DesignMatrix, InputSequence

SCHEMA = "qrcipc.capacity_report/1"
SINGULAR_CUTOFF = 1e-10


def legendre(d: int, x):
    """Legendre polynomial ``P_d(x)`` by the three-term recurrence.

    ``x`` may be a scalar or an array; values outside ``[-1, 1]`` are
    rejected.
    """
    if d < 0:
        raise ValidationError(f"degree must be >= 0, got {d}")
    arr = np.asarray(x, dtype=float)
    if np.any(np.abs(arr) > 1.0):
        raise ValidationError("Legendre argument outside [-1, 1]")
    p_prev = np.ones_like(arr)
    if d == 0:
        return p_prev if arr.ndim else float(p_prev)
    p = arr.copy()
    for n in range(1, d):
        p_prev, p = p, ((2 * n + 1) * arr * p - n * p_prev) / (n + 1)
    return p if arr.ndim else float(p)


def legendre_table(d_max: int, x: np.ndarray) -> np.ndarray:
    """Rows ``P_0(x) .. P_{d_max}(x)``."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValidationError("Legendre argument outside [-1, 1]")
    table = np.empty((d_max + 1, x.size))
    table[0] = 1.0
    if d_max >= 1:
        table[1] = x
    for n in range(1, d_max):
        table[n + 1] = ((2 * n + 1) * x * table[n] - n * table[n - 1]) / (n + 1)
    return table


@dataclass(frozen=True, order=True)
class TargetSpec:
    """A Legendre-product target: ``prod_i P_{d_i}(s~_{k - delay_i})``.

    ``terms`` holds ``(delay, degree)`` pairs with strictly increasing delays.
    """

    terms: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        terms = tuple((int(t), int(d)) for t, d in self.terms)
        if not terms:
            raise ValidationError("a target needs at least one term")
        delays = [t for t, _ in terms]
        if any(t < 0 for t in delays):
            raise ValidationError(f"delays must be >= 0: {terms}")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValidationError(f"delays must be strictly increasing: {terms}")
        if any(d < 1 for _, d in terms):
            raise ValidationError(f"term degrees must be >= 1: {terms}")
        object.__setattr__(self, "terms", terms)

    @property
    def degree(self) -> int:
        return sum(d for _, d in self.terms)

    @property
    def delays(self) -> Tuple[int, ...]:
        return tuple(t for t, _ in self.terms)

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(d for _, d in self.terms)

    @property
    def max_delay(self) -> int:
        return self.terms[-1][0]

    def __str__(self) -> str:
        return "*".join(f"P{d}[{t}]" for t, d in self.terms)


def _compositions(n: int, k: int) -> Iterable[Tuple[int, ...]]:
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(k))


@functools.lru_cache(maxsize=64)
def _targets(degree: int, delays: Tuple[int, ...], limit: int) -> Tuple[TargetSpec, ...]:
    out = []
    for k in range(1, limit + 1):
        for chosen in itertools.combinations(delays, k):
            for comp in _compositions(degree, k):
                out.append(TargetSpec(tuple(zip(chosen, comp))))
    out.sort(key=lambda s: (s.delays, s.degrees))
    return tuple(out)


def targets_of_degree(degree: int, delays: Sequence[int], max_terms: Optional[int] = None) -> List[TargetSpec]:
    """All targets of exactly ``degree`` whose delays are drawn from ``delays``."""
    delays = tuple(sorted(set(int(t) for t in delays)))
    limit = degree if max_terms is None else min(degree, max_terms)
    return list(_targets(int(degree), delays, int(limit)))


@dataclass(frozen=True)
class WindowPolicy:
    """Per-degree delay windows for target enumeration.

    ``windows[d] = (max_delay, max_terms)``; degrees without an entry use
    ``fallback``. Degree-1 windows grow in blocks of ``linear_block`` while
    the last block still carries above-threshold capacity.
    """

    windows: Mapping[int, Tuple[int, int]] = field(
        default_factory=lambda: {1: (150, 1), 2: (30, 2), 3: (15, 3), 4: (15, 4)}
    )
    fallback: Tuple[int, int] = (8, 4)
    delay_start: int = 0
    linear_block: int = 25
    extend_linear: bool = True

    def __post_init__(self):
        if self.delay_start not in (0, 1):
            raise ValidationError(f"delay_start must be 0 or 1, got {self.delay_start}")
        if self.linear_block < 1:
            raise ValidationError("linear_block must be >= 1")
        for d, (md, mt) in dict(self.windows).items():
            if int(d) < 1 or md < self.delay_start or mt < 1:
                raise ValidationError(f"invalid window for degree {d}: {(md, mt)}")

    def window(self, degree: int) -> Tuple[int, int]:
        return tuple(self.windows.get(degree, self.fallback))

    def delays(self, degree: int, cap: Optional[int] = None) -> range:
        max_delay = self.window(degree)[0]
        if cap is not None:
            max_delay = min(max_delay, cap)
        return range(self.delay_start, max_delay + 1)

    def to_dict(self) -> dict:
        return {
            "windows": {str(d): list(w) for d, w in sorted(dict(self.windows).items())},
            "fallback": list(self.fallback),
            "delay_start": self.delay_start,
            "linear_block": self.linear_block,
            "extend_linear": self.extend_linear,
        }


def enumerate_targets(d_max: int, policy: Optional[WindowPolicy] = None) -> List[TargetSpec]:
    """Every target of degree ``1..d_max`` inside the policy's windows.

    Ordered by degree, then lexicographically by delays.
    """
    if d_max < 1:
        raise ValidationError(f"d_max must be >= 1, got {d_max}")
    policy = policy or WindowPolicy()
    out = []
    for d in range(1, d_max + 1):
        out.extend(targets_of_degree(d, policy.delays(d), policy.window(d)[1]))
    return out


def _series_from_table(table: np.ndarray, spec: TargetSpec, washout: int, length: int, out=None) -> np.ndarray:
    y = out if out is not None else np.empty(length)
    (t0, d0), rest = spec.terms[0], spec.terms[1:]
    np.copyto(y, table[d0, washout - t0:washout - t0 + length])
    for t, d in rest:
        y *= table[d, washout - t:washout - t + length]
    return y


def target_series(inputs: InputSequence, spec: TargetSpec, washout: int) -> np.ndarray:
    """Target values for the ``len(inputs) - washout`` evaluation steps."""
    if spec.max_delay > washout:
        raise ValidationError(f"delay {spec.max_delay} exceeds washout {washout}")
    length = len(inputs) - washout
    if length < 1:
        raise ValidationError("washout leaves no evaluation steps")
    table = legendre_table(max(spec.degrees), inputs.scaled)
    return _series_from_table(table, spec, washout, length)


def _matrix(x) -> np.ndarray:
    return x.values if isinstance(x, DesignMatrix) else np.asarray(x, dtype=float)


def capacity(x, target) -> float:
    """``1 - min_w MSE(Xw, y) / <y^2>`` via a pseudo-inverse least-squares fit."""
    X = _matrix(x)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValidationError(f"shape mismatch: X {X.shape}, target {y.shape}")
    power = float(np.mean(y * y))
    if power == 0.0:
        raise DomainError("target has zero mean-square value")
    w, *_ = np.linalg.lstsq(X, y, rcond=SINGULAR_CUTOFF)
    mse = float(np.mean((X @ w - y) ** 2))
    return float(np.clip(1.0 - mse / power, 0.0, 1.0))


ESTIMATORS = ("leverage", "raw")


class CapacityEvaluator:
    """Shared orthonormal basis of ``span(X)`` for fast batched capacities.

    With ``Q`` an orthonormal basis of the column space, the least-squares
    residual of ``y`` is ``|y|^2 - |Q^T y|^2``, so the in-sample capacity
    reduces to ``|Q^T y|^2 / |y|^2``.

    The in-sample value is biased upward by the fit to noise. For a target
    carrying no information, its expectation is ``b = sum_t h_t y_t^2 / |y|^2``
    with ``h_t`` the leverage of row ``t``. That is ``rank / L`` only when
    ``y^2`` is unrelated to the leverage, which fails for high-degree
    Legendre targets. The ``"leverage"`` estimator reports ``(C - b) / (1 - b)``.
    """

    def __init__(self, x, batch: int = 8, estimator: str = "leverage"):
        if estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
        X = _matrix(x)
        u, sv, _ = np.linalg.svd(X, full_matrices=False)
        keep = sv > SINGULAR_CUTOFF * sv[0] if sv.size and sv[0] > 0 else np.zeros(0, bool)
        self.basis = np.ascontiguousarray(u[:, keep])
        self.leverage = np.einsum("ij,ij->i", self.basis, self.basis)
        self.rank = int(self.basis.shape[1])
        self.n_rows = X.shape[0]
        self.batch = batch
        self.estimator = estimator

    def evaluate(self, specs: Sequence[TargetSpec], table: np.ndarray, washout: int) -> Tuple[np.ndarray, np.ndarray]:
        """Raw and leverage-corrected capacities, both clipped to ``[0, 1]``."""
        L = self.n_rows
        raw = np.empty(len(specs))
        corrected = np.empty(len(specs))
        Y = np.empty((min(self.batch, max(len(specs), 1)), L))
        for start in range(0, len(specs), self.batch):
            chunk = specs[start:start + self.batch]
            Yc = Y[:len(chunk)]
            for j, spec in enumerate(chunk):
                _series_from_table(table, spec, washout, L, out=Yc[j])
            G = Yc @ self.basis
            Y2 = Yc * Yc
            power = Y2.sum(axis=1)
            if np.any(power == 0):
                raise DomainError("target has zero mean-square value")
            c = np.einsum("ij,ij->i", G, G) / power
            b = (Y2 @ self.leverage) / power
            sl = slice(start, start + len(chunk))
            raw[sl] = c
            with np.errstate(divide="ignore", invalid="ignore"):
                corrected[sl] = np.where(b < 1.0, (c - b) / (1.0 - b), 0.0)
        return np.clip(raw, 0.0, 1.0), np.clip(corrected, 0.0, 1.0)

    def capacities(self, specs: Sequence[TargetSpec], table: np.ndarray, washout: int) -> np.ndarray:
        """Capacities of ``specs`` under this evaluator's estimator."""
        raw, corrected = self.evaluate(specs, table, washout)
        return corrected if self.estimator == "leverage" else raw


def _surrogate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A, int(index)]))


def estimate_threshold(
    x,
    inputs: InputSequence,
    n_surrogates: int = 10,
    d_max: int = 9,
    policy: Optional[WindowPolicy] = None,
    samples_per_degree: int = 50,
    factor: float = 1.2,
    seed: int = 0,
    evaluator: Optional[CapacityEvaluator] = None,
    estimator: str = "leverage",
    coverage: float = 0.1,
) -> float:
    """Noise floor: ``factor`` times the largest capacity against surrogate inputs.

    Each surrogate is a fresh uniform input sequence, independent of the one
    that drove the reservoir; for every degree a random subset of the
    enumerated targets is built from it and regressed on the true ``X``.

    Each surrogate samples ``max(samples_per_degree, coverage * pool)``
    targets per degree. The real profile takes a maximum over the whole pool,
    so a fixed small sample would sit below its chance extremes; with the
    default ten surrogates the null sample matches the pool size.
    """
    if n_surrogates < 1:
        raise ValidationError("n_surrogates must be >= 1")
    if not 0.0 <= coverage <= 1.0:
        raise ValidationError(f"coverage must be in [0, 1], got {coverage}")
    policy = policy or WindowPolicy()
    evaluator = evaluator or CapacityEvaluator(x, estimator=estimator)
    washout = len(inputs) - evaluator.n_rows
    if washout < 0:
        raise ValidationError("design matrix has more rows than there are inputs")
    pools = {
        d: targets_of_degree(d, policy.delays(d, cap=washout), policy.window(d)[1])
        for d in range(1, d_max + 1)
    }
    best = 0.0
    for j in range(n_surrogates):
        rng = _surrogate_rng(seed, j)
        surrogate = 2.0 * rng.uniform(0.0, 1.0, size=len(inputs)) - 1.0
        table = legendre_table(d_max, surrogate)
        for d in range(1, d_max + 1):
            pool = pools[d]
            if not pool:
                continue
            size = min(len(pool), max(samples_per_degree, math.ceil(coverage * len(pool))))
            pick = rng.choice(len(pool), size=size, replace=False)
            caps = evaluator.capacities([pool[i] for i in np.sort(pick)], table, washout)
            best = max(best, float(caps.max()))
    return factor * best


@dataclass(frozen=True)
class CapacityRecord:
    spec: TargetSpec
    capacity: float
    above_threshold: bool
    raw_capacity: Optional[float] = None

    @property
    def degree(self) -> int:
        return self.spec.degree


@dataclass
class CapacityReport:
    records: List[CapacityRecord]
    threshold: float
    per_degree_totals: Dict[int, float]
    n_vars: int
    rank: int
    truncated_degrees: List[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.per_degree_totals.values()))

    @property
    def normalized_total(self) -> float:
        return self.total / self.n_vars

    def degree_share(self, degree: int) -> float:
        total = self.total
        return self.per_degree_totals.get(degree, 0.0) / total if total > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "threshold": self.threshold,
            "n_vars": self.n_vars,
            "rank": self.rank,
            "total": self.total,
            "normalized_total": self.normalized_total,
            "per_degree_totals": {str(d): v for d, v in sorted(self.per_degree_totals.items())},
            "truncated_degrees": list(self.truncated_degrees),
            "metadata": self.metadata,
            "records": [
                {
                    "degree": r.degree,
                    "delays": list(r.spec.delays),
                    "degrees": list(r.spec.degrees),
                    "capacity": r.capacity,
                    "raw_capacity": r.raw_capacity,
                    "above_threshold": r.above_threshold,
                }
                for r in self.records
            ],
        }

    def csv_rows(self) -> List[List[str]]:
        rows = [["degree", "delays", "degrees", "capacity", "raw_capacity", "above_threshold"]]
        for r in self.records:
            rows.append([
                str(r.degree),
                ";".join(map(str, r.spec.delays)),
                ";".join(map(str, r.spec.degrees)),
                repr(float(r.capacity)),
                "" if r.raw_capacity is None else repr(float(r.raw_capacity)),
                "1" if r.above_threshold else "0",
            ])
        return rows


def ipc_profile(
    x: DesignMatrix,
    inputs: InputSequence,
    d_max: int = 9,
    policy: Optional[WindowPolicy] = None,
    threshold: Optional[float] = None,
    n_surrogates: int = 10,
    samples_per_degree: int = 50,
    threshold_factor: float = 1.2,
    surrogate_seed: int = 0,
    estimator: str = "leverage",
    coverage: float = 0.1,
    keep_all: bool = False,
    metadata: Optional[dict] = None,
) -> CapacityReport:
    """Capacities of every enumerated target, truncated at the noise threshold.

    The rows of ``x`` are aligned with the last ``x.n_rows`` inputs; the
    leading inputs are the washout and bound the longest usable delay.
    Degree-1 records are always retained (for per-delay memory curves);
    others only when above threshold unless ``keep_all``.
    """
    if d_max < 1:
        raise ValidationError(f"d_max must be >= 1, got {d_max}")
    policy = policy or WindowPolicy()
    evaluator = CapacityEvaluator(x, estimator=estimator)
    washout = len(inputs) - evaluator.n_rows
    if washout < 0:
        raise ValidationError("design matrix has more rows than there are inputs")
    if threshold is None:
        threshold = estimate_threshold(
            x, inputs, n_surrogates=n_surrogates, d_max=d_max, policy=policy,
            samples_per_degree=samples_per_degree, factor=threshold_factor,
            seed=surrogate_seed, evaluator=evaluator, coverage=coverage,
        )
    table = legendre_table(d_max, inputs.scaled)
    n_vars = x.n_vars if isinstance(x, DesignMatrix) else _matrix(x).shape[1] - 1

    records: List[CapacityRecord] = []
    totals: Dict[int, float] = {}
    truncated: List[int] = []
    for d in range(1, d_max + 1):
        max_terms = policy.window(d)[1]
        delays = list(policy.delays(d, cap=washout))
        if not delays:
            totals[d] = 0.0
            continue
        specs = targets_of_degree(d, delays, max_terms)
        raw, corrected = evaluator.evaluate(specs, table, washout)
        caps = _pick(estimator, raw, corrected)
        if d == 1:
            # a whole trailing block, not just the edge delay, decides extension
            tail = delays[-1] - policy.linear_block
            hit_edge = any(c > threshold and s.max_delay > tail for s, c in zip(specs, caps))
        else:
            hit_edge = _edge_active(specs, caps, threshold, delays[-1])
        if d == 1 and policy.extend_linear:
            while hit_edge and delays[-1] < washout:
                block = list(range(delays[-1] + 1, min(delays[-1] + policy.linear_block, washout) + 1))
                new_specs = targets_of_degree(1, block, 1)
                new_raw, new_corrected = evaluator.evaluate(new_specs, table, washout)
                new_caps = _pick(estimator, new_raw, new_corrected)
                specs += new_specs
                raw = np.concatenate([raw, new_raw])
                caps = np.concatenate([caps, new_caps])
                delays += block
                hit_edge = bool(np.any(new_caps > threshold))
        if hit_edge:
            truncated.append(d)
        above = caps > threshold
        totals[d] = float(caps[above].sum())
        for spec, c, c_raw, a in zip(specs, caps, raw, above):
            if keep_all or d == 1 or a:
                records.append(CapacityRecord(spec, float(c), bool(a), float(c_raw)))

    meta = dict(metadata or {})
    meta.setdefault("d_max", d_max)
    meta.setdefault("policy", policy.to_dict())
    meta.setdefault("length", evaluator.n_rows)
    meta.setdefault("washout", washout)
    meta.setdefault("surrogate_seed", surrogate_seed)
    meta.setdefault("n_surrogates", n_surrogates)
    meta.setdefault("estimator", estimator)
    meta.setdefault("coverage", coverage)
    return CapacityReport(
        records=records,
        threshold=float(threshold),
        per_degree_totals=totals,
        n_vars=n_vars,
        rank=evaluator.rank,
        truncated_degrees=truncated,
        metadata=meta,
    )


def _pick(estimator: str, raw: np.ndarray, corrected: np.ndarray) -> np.ndarray:
    return corrected if estimator == "leverage" else raw


def _edge_active(specs: Sequence[TargetSpec], caps: np.ndarray, threshold: float, edge: int) -> bool:
    return any(c > threshold and s.max_delay == edge for s, c in zip(specs, caps))


@dataclass(frozen=True)
class RealizationSummary:
    count: int
    degree_mean: Dict[int, float]
    degree_std: Dict[int, float]
    total_mean: float
    total_std: float
    normalized_mean: float
    normalized_std: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "degree_mean": {str(d): v for d, v in sorted(self.degree_mean.items())},
            "degree_std": {str(d): v for d, v in sorted(self.degree_std.items())},
            "total_mean": self.total_mean,
            "total_std": self.total_std,
            "normalized_mean": self.normalized_mean,
            "normalized_std": self.normalized_std,
        }


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def aggregate_realizations(reports: Sequence[CapacityReport]) -> RealizationSummary:
    """Per-degree and total mean / sample standard deviation over realizations."""
    if not reports:
        raise ValidationError("cannot aggregate an empty list of reports")
    degrees = sorted(set().union(*(r.per_degree_totals for r in reports)))
    mean, std = {}, {}
    for d in degrees:
        mean[d], std[d] = _mean_std([r.per_degree_totals.get(d, 0.0) for r in reports])
    tm, ts = _mean_std([r.total for r in reports])
    nm, ns = _mean_std([r.normalized_total for r in reports])
    return RealizationSummary(len(reports), mean, std, tm, ts, nm, ns)
