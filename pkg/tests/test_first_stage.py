from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxsurv.data_model import CAUSE_CENSORED, CAUSE_NCO, CAUSE_PRIMARY, NcoKind, NcoSpec, ProximalDataset, SurvivalOutcome
from proxsurv.exceptions import ConvergenceError, EstimationError, NoEventsError, SingularDesignError
from proxsurv import first_stage
from proxsurv.first_stage import (
    fit_competing_nco,
    fit_linear_nco,
    fit_loglinear_nco,
    fit_nco,
    fit_survival_nco,
)
from proxsurv.simulation import SimConfig, simulate_competing_dataset, simulate_dataset

from .conftest import random_dataset


def bare(n, A=None, Z=None, X=None, outcome=None):
    """Dataset with only the blocks a test needs."""
    empty = np.empty((n, 0))
    return ProximalDataset(
        outcome=outcome or SurvivalOutcome(np.ones(n), np.ones(n, int)),
        A=empty if A is None else A,
        X=empty if X is None else X,
        Z=empty if Z is None else Z,
        W={},
        nco_specs=(),
    )


def test_exact_fit_on_z_column():
    ds = random_dataset(0)
    fit = fit_linear_nco(ds.Z[:, 1], ds)
    expect = np.zeros(len(fit.coefficients))
    expect[list(fit.coef_names).index("z2")] = 1.0
    np.testing.assert_allclose(fit.coefficients, expect, atol=1e-12)
    np.testing.assert_allclose(fit.response - fit.linear_predictor, 0, atol=1e-12)


def test_three_point_normal_equations():
    # (1, A, Z) rows (1,0,0), (1,1,0), (1,0,1) with W = (1, 3, 4): the normal
    # equations are square and solved by intercept 1, A slope 3-1 = 2,
    # Z slope 4-1 = 3.
    ds = bare(3, A=np.array([0.0, 1, 0]), Z=np.array([0.0, 0, 1]))
    fit = fit_linear_nco(np.array([1.0, 3, 4]), ds)
    np.testing.assert_allclose(fit.coefficients, [1, 2, 3], atol=1e-12)
    assert fit.coef_names == ("(intercept)", "a1", "z1")


def test_five_point_normal_equations_by_hand():
    A = np.array([0.0, 1, 0, 1, 0])
    Z = np.array([0.0, 1, 1, 2, 1])
    w = np.array([1.0, 2, 2, 3, 2])
    ds = bare(5, A=A, Z=Z)
    G = np.column_stack([np.ones(5), A, Z])
    np.testing.assert_array_equal(G.T @ G, [[5, 2, 5], [2, 2, 3], [5, 3, 7]])
    # w = 1 + Z exactly, so the normal-equation solution is (1, 0, 1)
    fit = fit_linear_nco(w, ds)
    np.testing.assert_allclose(fit.coefficients, [1, 0, 1], atol=1e-12)


def test_reduced_form_coefficient_recovered():
    sim = simulate_dataset(SimConfig(n=5000, c_U=1.0, reps=1, seed=3))
    ds = sim.dataset
    fit = fit_linear_nco(ds.W["w1"], ds)
    # gamma_Z from a separate large-n projection of U on (1, A, Z, X)
    big = simulate_dataset(SimConfig(n=200_000, c_U=1.0, reps=1, seed=99))
    G = np.column_stack([np.ones(big.dataset.n), big.dataset.A, big.dataset.Z, big.dataset.X])
    gamma = np.linalg.lstsq(G, big.latent_u, rcond=None)[0]
    c_u1 = 0.5
    np.testing.assert_allclose(fit.coefficients[2:4], c_u1 * gamma[2:4], atol=0.05)


def test_linear_singular_design():
    ds = random_dataset(1)
    dup = ProximalDataset(ds.outcome, ds.A, ds.X, np.column_stack([ds.Z, ds.Z[:, 0]]), ds.W, ds.nco_specs)
    with pytest.raises(SingularDesignError):
        fit_linear_nco(ds.W["w1"], dup)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100), st.booleans(), st.floats(-100, 100))
def test_linear_affine_stability(seed, a, neg, b):
    a = -a if neg else a
    ds = random_dataset(seed, n=60)
    w = ds.W["w1"]
    f1 = fit_linear_nco(w, ds)
    f2 = fit_linear_nco(a * w + b, ds)
    np.testing.assert_allclose(f2.coefficients[1:], a * f1.coefficients[1:], rtol=1e-10, atol=1e-10 * abs(a))
    np.testing.assert_allclose(f2.linear_predictor, a * f1.linear_predictor + b,
                               rtol=1e-10, atol=1e-10 * (abs(a) + abs(b)))


def test_loglinear_constant():
    ds = bare(50)
    fit = fit_loglinear_nco(np.full(50, np.e), ds)
    np.testing.assert_allclose(fit.coefficients, [1.0], atol=1e-12)


def test_loglinear_constant_with_regressors():
    rng = np.random.default_rng(4)
    ds = bare(80, A=rng.integers(0, 2, 80).astype(float), Z=rng.normal(size=80))
    fit = fit_loglinear_nco(np.full(80, np.e), ds)
    np.testing.assert_allclose(fit.coefficients, [1, 0, 0], atol=1e-10)


def test_loglinear_poisson_recovery():
    rng = np.random.default_rng(10)
    n = 10_000
    z = rng.uniform(-1, 1, n)
    w = rng.poisson(np.exp(0.5 - 0.3 * z)).astype(float)
    fit = fit_loglinear_nco(w, bare(n, Z=z))
    np.testing.assert_allclose(fit.coefficients, [0.5, -0.3], atol=0.05)


def _count_data(seed, n):
    rng = np.random.default_rng(seed)
    ds = random_dataset(seed, n=n)
    eta = 0.2 + 0.3 * ds.A[:, 0] + 0.4 * ds.Z[:, 0] - 0.2 * ds.X[:, 0]
    return ds, rng.poisson(np.exp(eta)).astype(float)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3))
def test_loglinear_offset_identity(seed, log_c):
    ds, w = _count_data(seed, 150)
    f1 = fit_loglinear_nco(w, ds)
    f2 = fit_loglinear_nco(w, ds, offset=np.full(ds.n, log_c))
    assert abs((f1.coefficients[0] - f2.coefficients[0]) - log_c) < 1e-8
    np.testing.assert_allclose(f2.coefficients[1:], f1.coefficients[1:], rtol=0, atol=1e-8)


def test_loglinear_offset_log2():
    ds, w = _count_data(5, 500)
    f1 = fit_loglinear_nco(w, ds)
    f2 = fit_loglinear_nco(w, ds, offset=np.full(ds.n, np.log(2)))
    assert abs(f1.coefficients[0] - f2.coefficients[0] - np.log(2)) < 1e-8
    np.testing.assert_allclose(f2.coefficients[1:], f1.coefficients[1:], atol=1e-8)
    # the predictor excludes the offset
    np.testing.assert_allclose(f2.linear_predictor, f2.design @ f2.coefficients)


def test_loglinear_errors(monkeypatch):
    ds, w = _count_data(6, 100)
    with pytest.raises(EstimationError, match="zero"):
        fit_loglinear_nco(np.zeros(ds.n), ds)
    monkeypatch.setattr(first_stage, "MAX_ITER", 1)
    with pytest.raises(ConvergenceError) as info:
        fit_loglinear_nco(w * 50, ds)
    assert info.value.gradient_norm > 0


def test_survival_nco_recovery():
    rng = np.random.default_rng(11)
    n = 5000
    z = rng.uniform(size=n)
    t = rng.exponential(1 / (0.3 + 0.5 * z))
    c = rng.uniform(1, 6, n)
    w = SurvivalOutcome(np.minimum(t, c), (t <= c).astype(int))
    fit = fit_survival_nco(w, bare(n, Z=z))
    assert abs(fit.coefficients[0] - 0.5) < 0.05
    # no intercept in the predictor
    assert "(intercept)" not in fit.coef_names
    np.testing.assert_allclose(fit.linear_predictor, z * fit.coefficients[0])


def test_survival_nco_errors():
    ds = random_dataset(2)
    w = SurvivalOutcome(np.ones(ds.n), np.zeros(ds.n, int))
    with pytest.raises(NoEventsError, match="zero events"):
        fit_survival_nco(w, ds, name="s")
    w = SurvivalOutcome(np.arange(1.0, ds.n + 1), np.ones(ds.n, int))
    const = ProximalDataset(ds.outcome, ds.A, ds.X, np.ones((ds.n, 1)), {}, ())
    with pytest.raises(SingularDesignError):
        fit_survival_nco(w, const)


def _competing_data(seed, n=5000):
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=n)
    t1 = rng.exponential(1 / (0.2 + 0.4 * z))
    t0 = rng.exponential(1 / 0.3, n)
    c = 5.0
    time = np.minimum(np.minimum(t0, t1), c)
    status = np.full(n, CAUSE_CENSORED)
    status[(t0 < t1) & (t0 <= c)] = CAUSE_PRIMARY
    status[(t1 <= t0) & (t1 <= c)] = CAUSE_NCO
    return bare(n, Z=z, outcome=SurvivalOutcome(time, status, competing=True))


def test_competing_nco_recovery():
    fit = fit_competing_nco(_competing_data(12))
    assert abs(fit.coefficients[0] - 0.4) < 0.05


def test_competing_label_symmetry():
    ds = _competing_data(13, n=800)
    s = ds.outcome.status
    swapped = np.where(s == CAUSE_NCO, CAUSE_PRIMARY, np.where(s == CAUSE_PRIMARY, CAUSE_NCO, s))
    ds2 = bare(ds.n, Z=ds.Z, outcome=SurvivalOutcome(ds.outcome.time, swapped, competing=True))
    f_primary = fit_competing_nco(ds, nco_label=CAUSE_PRIMARY)
    f_swapped = fit_competing_nco(ds2)
    np.testing.assert_array_equal(f_primary.coefficients, f_swapped.coefficients)


def test_competing_no_nco_events():
    ds = _competing_data(14, n=200)
    s = ds.outcome.status.copy()
    s[s == CAUSE_NCO] = CAUSE_CENSORED
    ds = bare(ds.n, Z=ds.Z, outcome=SurvivalOutcome(ds.outcome.time, s, competing=True))
    with pytest.raises(NoEventsError):
        fit_competing_nco(ds)


def _all_kinds(seed):
    ds, counts = _count_data(seed, 300)
    rng = np.random.default_rng(seed)
    wt = rng.exponential(1 / (0.5 + 0.3 * np.abs(ds.Z[:, 0])))
    srv = SurvivalOutcome(np.minimum(wt, 2.0), (wt <= 2.0).astype(int))
    ds = ds.with_ncos(
        {"w1": ds.W["w1"], "cnt": counts, "srv": srv},
        (NcoSpec("w1", NcoKind.LINEAR), NcoSpec("cnt", NcoKind.LOGLINEAR), NcoSpec("srv", NcoKind.SURVIVAL)),
    )
    comp = simulate_competing_dataset(SimConfig(n=300, reps=1, seed=seed)).dataset
    return [fit_nco(s, ds) for s in ds.nco_specs] + [fit_nco(comp.nco_specs[0], comp)]


@pytest.mark.parametrize("seed", range(5))
def test_estimating_functions_solved(seed):
    for fit in _all_kinds(seed):
        scale = 1 + np.abs(fit.estimating_functions).max()
        assert np.linalg.norm(fit.mean_estimating_function(fit.coefficients)) <= 1e-8 * scale, fit.kind
        assert np.all(np.abs(fit.estimating_functions.sum(axis=0)) <= 1e-8 * fit.n * scale), fit.kind


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_matches_finite_differences(seed):
    for fit in _all_kinds(seed):
        c = fit.coefficients
        h = 1e-6 * (1 + np.abs(c))
        fd = np.column_stack([
            (fit.mean_estimating_function(c + h[j] * e) - fit.mean_estimating_function(c - h[j] * e)) / (2 * h[j])
            for j, e in enumerate(np.eye(len(c)))
        ])
        np.testing.assert_allclose(fit.jacobian, fd, rtol=1e-5, atol=1e-8 * np.abs(fd).max())


def test_predictor_intercept_convention():
    kinds = {f.kind: f for f in _all_kinds(0)}
    assert kinds[NcoKind.LINEAR].coef_names[0] == "(intercept)"
    assert kinds[NcoKind.LOGLINEAR].coef_names[0] == "(intercept)"
    assert "(intercept)" not in kinds[NcoKind.SURVIVAL].coef_names
    assert "(intercept)" not in kinds[NcoKind.COMPETING_RISK].coef_names
