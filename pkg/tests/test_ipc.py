import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre as npleg

from qrcipc.errors import DomainError, ValidationError
from qrcipc.ipc import (
    CapacityEvaluator,
    CapacityRecord,
    CapacityReport,
    TargetSpec,
    WindowPolicy,
    aggregate_realizations,
    capacity,
    enumerate_targets,
    estimate_threshold,
    ipc_profile,
    legendre,
    legendre_table,
    target_series,
    targets_of_degree,
)
from qrcipc.reservoir import InputSequence, ReservoirConfig, run


def projection_capacity(X, y):
    """Independent oracle: y^T X (X^T X)^+ X^T y / y^T y."""
    return float(y @ X @ np.linalg.pinv(X.T @ X) @ X.T @ y / (y @ y))


# --- Legendre polynomials ---------------------------------------------------

def test_legendre_low_orders():
    x = np.linspace(-1, 1, 11)
    assert np.all(legendre(0, x) == 1)
    assert np.array_equal(legendre(1, x), x)
    assert legendre(2, 0.5) == pytest.approx(-0.125)


@pytest.mark.parametrize("d", range(0, 10))
def test_legendre_matches_numpy(d):
    x = np.linspace(-1, 1, 201)
    ref = npleg.legval(x, [0] * d + [1])
    assert np.max(np.abs(legendre(d, x) - ref)) < 1e-12
    assert np.max(np.abs(legendre_table(9, x)[d] - ref)) < 1e-12


def test_legendre_rejects_out_of_range():
    with pytest.raises(ValidationError):
        legendre(2, 1.5)
    with pytest.raises(ValidationError):
        legendre(-1, 0.0)


@pytest.mark.parametrize("d", range(1, 10))
def test_legendre_mean_vanishes_under_uniform(d):
    x = np.random.default_rng(d).uniform(-1, 1, 10 ** 6)
    sd = 1 / math.sqrt(2 * d + 1)
    assert abs(legendre(d, x).mean()) < 3 * sd / math.sqrt(x.size)


# --- targets ----------------------------------------------------------------

def test_enumeration_counts():
    assert len(targets_of_degree(1, range(0, 101))) == 101
    two = targets_of_degree(2, [0, 1, 2])
    assert len(two) == 6
    assert sum(len(s.terms) == 1 for s in two) == 3
    three = targets_of_degree(3, [0, 1])
    assert {s.terms for s in three} == {
        ((0, 3),), ((1, 3),), ((0, 1), (1, 2)), ((0, 2), (1, 1))
    }


def brute_force(degree, delays, max_terms):
    out = set()
    for degs in itertools.product(range(degree + 1), repeat=len(delays)):
        if sum(degs) == degree and 0 < sum(1 for g in degs if g) <= max_terms:
            out.add(tuple((t, g) for t, g in zip(delays, degs) if g))
    return out


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))
@settings(max_examples=50, deadline=None)
def test_enumeration_matches_brute_force(degree, n_delays, max_terms):
    delays = list(range(n_delays))
    got = targets_of_degree(degree, delays, max_terms)
    assert len({s.terms for s in got}) == len(got)
    assert {s.terms for s in got} == brute_force(degree, delays, max_terms)
    assert all(s.degree == degree for s in got)


def test_enumerate_targets_order_and_policy():
    specs = enumerate_targets(3, WindowPolicy(windows={1: (4, 1), 2: (2, 2), 3: (1, 3)}))
    assert [s.degree for s in specs] == sorted(s.degree for s in specs)
    assert len(specs) == 5 + 6 + 4
    deg2 = [s for s in specs if s.degree == 2]
    assert deg2 == sorted(deg2, key=lambda s: (s.delays, s.degrees))
    fallback = WindowPolicy(fallback=(2, 1))
    assert len(targets_of_degree(7, fallback.delays(7), fallback.window(7)[1])) == 3


def test_window_policy_delay_start():
    p = WindowPolicy(windows={1: (5, 1)}, delay_start=1)
    assert list(p.delays(1)) == [1, 2, 3, 4, 5]
    with pytest.raises(ValidationError):
        WindowPolicy(delay_start=2)


def test_target_spec_validation():
    with pytest.raises(ValidationError):
        TargetSpec(((2, 1), (1, 1)))
    with pytest.raises(ValidationError):
        TargetSpec(((0, 0),))
    with pytest.raises(ValidationError):
        TargetSpec(())
    s = TargetSpec(((0, 1), (2, 2)))
    assert (s.degree, s.delays, s.degrees, s.max_delay) == (3, (0, 2), (1, 2), 2)


def test_target_series_examples():
    inputs = InputSequence.uniform(40, 3)
    x = inputs.scaled
    W = 5
    y = target_series(inputs, TargetSpec(((1, 1),)), W)
    assert np.allclose(y, x[W - 1:-1])
    y = target_series(inputs, TargetSpec(((0, 1), (2, 2))), W)
    assert np.allclose(y, x[W:] * (1.5 * x[W - 2:-2] ** 2 - 0.5))


def test_target_series_second_moment():
    inputs = InputSequence.uniform(100_000 + 10, 8)
    y = target_series(inputs, TargetSpec(((3, 2),)), 10)
    assert y.size == 100_000
    assert abs(np.mean(y * y) / 0.2 - 1) < 0.05


def test_target_series_delay_beyond_washout():
    with pytest.raises(ValidationError):
        target_series(InputSequence.uniform(20, 0), TargetSpec(((6, 1),)), 5)


# --- capacity ---------------------------------------------------------------

def test_capacity_perfect_column(rng):
    y = rng.uniform(-1, 1, 2000)
    X = np.column_stack([rng.normal(size=(2000, 3)), y, np.ones(2000)])
    assert abs(capacity(X, y) - 1) < 1e-10


def test_capacity_of_noise_is_chance_level():
    rng = np.random.default_rng(5)
    L = 100_000
    X = np.column_stack([rng.normal(size=(L, 6)), np.ones(L)])
    y = rng.uniform(-1, 1, L)
    c = capacity(X, y)
    assert c < 20 * 7 / L


@given(st.integers(0, 10_000), st.integers(1, 8))
@settings(max_examples=40, deadline=None)
def test_capacity_matches_projection_form(seed, n_vars):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(500, n_vars)), np.ones(500)])
    y = rng.uniform(-1, 1, 500) + 0.3 * X[:, 0]
    assert abs(capacity(X, y) - projection_capacity(X, y)) < 1e-10


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_capacity_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(300, 4)), np.ones(300)])
    y = rng.uniform(-1, 1, 300) + X[:, 1]
    assert capacity(X, scale * y) == pytest.approx(capacity(X, y), abs=1e-10)
    assert capacity(X * scale, y) == pytest.approx(capacity(X, y), abs=1e-10)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_capacity_monotone_in_columns(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(300, 5)), np.ones(300)])
    y = rng.uniform(-1, 1, 300) + X[:, 0] - X[:, 3]
    assert capacity(X[:, [0, 1, 5]], y) <= capacity(X, y) + 1e-12
    assert 0.0 <= capacity(X, y) <= 1.0


def test_capacity_errors():
    with pytest.raises(ValidationError):
        capacity(np.ones((5, 2)), np.ones(4))
    with pytest.raises(DomainError):
        capacity(np.ones((5, 2)), np.zeros(5))


def test_evaluator_raw_matches_capacity(rng):
    inputs = InputSequence.uniform(600, 2)
    W = 20
    X = np.column_stack([rng.normal(size=(580, 5)), inputs.scaled[W:], np.ones(580)])
    table = legendre_table(3, inputs.scaled)
    specs = enumerate_targets(3, WindowPolicy(windows={1: (6, 1), 2: (4, 2), 3: (3, 3)}))
    raw, corrected = CapacityEvaluator(X, batch=7).evaluate(specs, table, W)
    ref = [capacity(X, target_series(inputs, s, W)) for s in specs]
    assert np.max(np.abs(raw - ref)) < 1e-10
    assert raw[0] == pytest.approx(1.0, abs=1e-10)
    assert corrected[0] == pytest.approx(1.0, abs=1e-10)
    assert np.all(corrected <= raw + 1e-12)


def test_leverage_correction_is_unbiased_on_noise():
    rng = np.random.default_rng(11)
    L, W = 5000, 10
    X = np.column_stack([rng.normal(size=(L, 40)) ** 3, np.ones(L)])
    inputs = InputSequence.uniform(L + W, 4)
    table = legendre_table(6, inputs.scaled)
    specs = targets_of_degree(6, range(0, 3), 1)
    ev = CapacityEvaluator(X)
    L_ = ev.n_rows
    G = np.empty((len(specs), L_))
    # unclipped comparison: recompute from basis
    from qrcipc.ipc import _series_from_table
    for j, s in enumerate(specs):
        _series_from_table(table, s, W, L_, out=G[j])
    raw = ((G @ ev.basis) ** 2).sum(1) / (G * G).sum(1)
    b = (G * G) @ ev.leverage / (G * G).sum(1)
    assert np.all(np.abs(raw - b) < 5 * np.sqrt(2 * 41) / L)


def test_evaluator_rejects_unknown_estimator():
    with pytest.raises(ValidationError):
        CapacityEvaluator(np.ones((4, 2)), estimator="bogus")


# --- threshold --------------------------------------------------------------

@pytest.fixture(scope="module")
def noise_case():
    rng = np.random.default_rng(0)
    L, W = 100_000, 1000
    X = np.column_stack([rng.normal(size=(L, 6)), np.ones(L)])
    return X, InputSequence.uniform(L + W, 1)


def test_threshold_scale(noise_case):
    X, inputs = noise_case
    for est in ("raw", "leverage"):
        thr = estimate_threshold(X, inputs, n_surrogates=10, estimator=est)
        assert 1e-4 < thr < 1e-2


def test_threshold_monotone_in_surrogates(noise_case):
    X, inputs = noise_case
    t1 = estimate_threshold(X, inputs, n_surrogates=1, d_max=4)
    t10 = estimate_threshold(X, inputs, n_surrogates=10, d_max=4)
    assert t10 >= t1
    assert t1 == estimate_threshold(X, inputs, n_surrogates=1, d_max=4)


def test_threshold_separates_perfect_memory(noise_case):
    X, inputs = noise_case
    Xp = np.column_stack([inputs.scaled[1000:], X])
    thr = estimate_threshold(Xp, inputs, n_surrogates=3, d_max=3)
    assert capacity(Xp, inputs.scaled[1000:]) > 100 * thr


# --- profile ----------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_report():
    inputs = InputSequence.uniform(20_000 + 1000, 3)
    X = run(ReservoirConfig(n_qubits=1, coupling_scale=0.0), inputs, 1000)
    return ipc_profile(X, inputs, surrogate_seed=1)


def test_profile_single_qubit_oracle(oracle_report):
    r = oracle_report
    assert abs(r.total - 1) < 1e-3
    assert r.per_degree_totals[1] == pytest.approx(r.total)
    top = max(r.records, key=lambda c: c.capacity)
    assert top.spec.terms == ((0, 1),)
    assert top.capacity == pytest.approx(1.0, abs=1e-10)
    assert r.n_vars == 1 and r.rank == 2


def test_profile_bound_and_schema(oracle_report):
    d = oracle_report.to_dict()
    assert d["schema"] == "qrcipc.capacity_report/1"
    assert d["total"] <= d["n_vars"] * 1.02
    rows = oracle_report.csv_rows()
    assert rows[0] == ["degree", "delays", "degrees", "capacity", "raw_capacity", "above_threshold"]
    assert all(len(row) == 6 for row in rows)


def test_profile_keeps_all_degree_one_records(oracle_report):
    deg1 = [c for c in oracle_report.records if c.degree == 1]
    assert [c.spec.delays[0] for c in deg1] == list(range(0, 151))
    assert all(c.degree == 1 or c.above_threshold for c in oracle_report.records)


def test_profile_linear_window_extends():
    # an exact delay line of depth 200 needs the degree-1 window to grow past 150
    inputs = InputSequence.uniform(3000 + 400, 6)
    x = inputs.scaled
    W = 400
    X = np.column_stack([x[W - t:len(x) - t] for t in range(0, 200)] + [np.ones(3000)])
    r = ipc_profile(X, inputs, d_max=1, threshold=0.05)
    delays = [c.spec.delays[0] for c in r.records]
    assert max(delays) >= 200
    assert r.per_degree_totals[1] == pytest.approx(200, abs=1e-6)
    assert 1 not in r.truncated_degrees


def test_profile_explicit_threshold_and_keep_all():
    inputs = InputSequence.uniform(2000 + 50, 1)
    X = run(ReservoirConfig(n_qubits=2, dt=1.0), inputs, 50)
    policy = WindowPolicy(windows={1: (10, 1), 2: (5, 2)}, extend_linear=False)
    r = ipc_profile(X, inputs, d_max=2, policy=policy, threshold=0.01, keep_all=True)
    assert len(r.records) == 11 + 21
    assert r.threshold == 0.01
    assert r.per_degree_totals[2] == pytest.approx(
        sum(c.capacity for c in r.records if c.degree == 2 and c.capacity > 0.01)
    )


def test_profile_window_capped_by_washout():
    inputs = InputSequence.uniform(500 + 3, 1)
    X = run(ReservoirConfig(n_qubits=2), inputs, 3)
    r = ipc_profile(X, inputs, d_max=2, threshold=0.0)
    assert max(c.spec.max_delay for c in r.records) == 3


def test_profile_rejects_short_inputs():
    inputs = InputSequence.uniform(100, 1)
    X = np.ones((120, 2))
    with pytest.raises(ValidationError):
        ipc_profile(X, inputs)


# --- aggregation ------------------------------------------------------------

def fake_report(total, n_vars=5):
    return CapacityReport(
        records=[CapacityRecord(TargetSpec(((0, 1),)), 1.0, True)],
        threshold=0.0,
        per_degree_totals={1: total * 0.75, 2: total * 0.25},
        n_vars=n_vars,
        rank=n_vars + 1,
    )


def test_aggregate_identical_reports():
    s = aggregate_realizations([fake_report(4.5)] * 10)
    assert s.count == 10 and s.total_std == 0 and s.total_mean == pytest.approx(4.5)
    assert all(v == 0 for v in s.degree_std.values())


def test_aggregate_two_point_sample():
    s = aggregate_realizations([fake_report(4.0), fake_report(6.0)])
    assert s.total_mean == pytest.approx(5.0)
    assert s.total_std == pytest.approx(math.sqrt(2))
    assert s.normalized_mean == pytest.approx(1.0)


def test_aggregate_empty():
    with pytest.raises(ValidationError):
        aggregate_realizations([])


def test_evaluator_scale_invariant(rng):
    inputs = InputSequence.uniform(3000 + 10, 2)
    X = run(ReservoirConfig(n_qubits=3, dt=2.0), inputs, 10).values
    specs = enumerate_targets(2, WindowPolicy(windows={1: (5, 1), 2: (3, 2)}))
    table = legendre_table(2, inputs.scaled)
    scaled = X.copy()
    scaled[:, :-1] *= -37.5
    a = CapacityEvaluator(X).evaluate(specs, table, 10)
    b = CapacityEvaluator(scaled).evaluate(specs, table, 10)
    assert np.max(np.abs(a[0] - b[0])) < 1e-10
    assert np.max(np.abs(a[1] - b[1])) < 1e-10


def test_shuffle_destroys_every_capacity():
    W = 200
    inputs = InputSequence.uniform(20_000 + W, 12)
    X = run(ReservoirConfig(n_qubits=4, coupling_seed=12), inputs, W)
    real = ipc_profile(X, inputs, d_max=4, surrogate_seed=3)
    assert real.total > 2.0
    shuffled = InputSequence(np.random.default_rng(1).permutation(inputs.values))
    fake = ipc_profile(X, shuffled, d_max=4, threshold=real.threshold)
    assert fake.total == 0.0
    assert not any(r.above_threshold for r in fake.records)
