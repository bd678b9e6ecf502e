from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvglmm.core import Cohort
from mvglmm.lmm import (
    GaussianLmmSpec, blup, conditional_residuals, fit_all_gaussian, fit_lmm, fit_lmm_arrays, predict_effects,
)
from mvglmm.sim import SimScenario, simulate_cohort

from conftest import make_record


def simulate_oneway(n, sigma2_U, sigma2_c, seed, K=10, beta=(1.0, 0.5, -0.3)):
    rng = np.random.default_rng(seed)
    br = rng.integers(K, size=n)
    X = np.column_stack([np.ones(n), rng.random(n) < 0.5, rng.random(n) < 0.3]).astype(float)
    u = rng.normal(0, math.sqrt(sigma2_U), K)
    y = X @ np.asarray(beta) + u[br] + rng.normal(0, math.sqrt(sigma2_c), n)
    return y, X, br


def marginal_loglik(y, X, br, beta, s2U, s2c, K=10):
    """Dense multivariate-normal log-likelihood (independent of the profiled code path)."""
    Z = np.zeros((y.size, K))
    Z[np.arange(y.size), br] = 1
    Vm = s2U * Z @ Z.T + s2c * np.eye(y.size)
    r = y - X @ beta
    sign, logdet = np.linalg.slogdet(Vm)
    return -0.5 * (y.size * math.log(2 * math.pi) + logdet + r @ np.linalg.solve(Vm, r))


def henderson(y, X, br, K, s2U, s2V, s2e):
    """Dense Henderson mixed-model equations with Z = [Z_U, I_n]."""
    n, p = X.shape
    Zu = np.zeros((n, K))
    Zu[np.arange(n), br] = 1
    Z = np.hstack([Zu, np.eye(n)])
    Ginv = np.diag(np.r_[np.full(K, 1 / s2U), np.full(n, 1 / s2V)])
    C = np.block([[X.T @ X, X.T @ Z], [Z.T @ X, Z.T @ Z + s2e * Ginv]])
    rhs = np.r_[X.T @ y, Z.T @ y]
    sol = np.linalg.solve(C, rhs)
    return sol[:p], sol[p:p + K], sol[p + K:]


def test_constant_response_singleton_branches():
    y = np.full(10, 2.5)
    X = np.ones((10, 1))
    fit = fit_lmm_arrays(y, X, np.arange(10), 10)
    assert np.allclose(fit.beta, [2.5])
    assert fit.sigma2_U == fit.sigma2_V == fit.sigma2_eps == 0.0
    assert fit.sigma2_U_at_zero
    assert np.all(fit.predicted_U == 0) and np.all(fit.predicted_V == 0)


def test_constant_response_via_cohort():
    records = [make_record(i, branch=i % 10, gender=("male" if i % 2 else "female"),
                           age=("21plus" if i % 3 == 0 else "under21"), scores=[1.0] * 7) for i in range(20)]
    fit = fit_lmm(Cohort(tuple(records)), GaussianLmmSpec.for_cohort(Cohort(tuple(records)), "Math"))
    assert np.allclose(fit.beta, [1.0, 0.0, 0.0], atol=1e-12)
    assert fit.sigma2_U == 0.0 and fit.sigma2_combined == 0.0


def test_zero_branch_variance_monte_carlo():
    hits = 0
    beta_true = np.array([1.0, 0.5, -0.3])
    for seed in range(20):
        y, X, br = simulate_oneway(500, 0.0, 1.0, seed)
        fit = fit_lmm_arrays(y, X, br, 10)
        cov = np.linalg.inv(X.T @ X) * fit.sigma2_combined
        assert np.all(np.abs(fit.beta - beta_true) <= 3 * np.sqrt(np.diag(cov)))
        hits += fit.sigma2_U < 0.05 * fit.sigma2_combined
    assert hits >= 18


@pytest.mark.parametrize("seed", range(3))
def test_balanced_anova_closed_form(seed):
    a, m = 10, 15
    rng = np.random.default_rng(seed)
    br = np.repeat(np.arange(a), m)
    y = 2.0 + rng.normal(0, 0.8, a)[br] + rng.normal(0, 1.0, a * m)
    fit = fit_lmm_arrays(y, np.ones((a * m, 1)), br, a)
    means = np.array([y[br == k].mean() for k in range(a)])
    ssw = float(np.sum((y - means[br]) ** 2))
    ssb = float(m * np.sum((means - y.mean()) ** 2))
    s2c = ssw / (a * (m - 1))
    s2U = (ssb / a - s2c) / m
    assert s2U > 0
    assert fit.sigma2_combined == pytest.approx(s2c, abs=1e-6)
    assert fit.sigma2_U == pytest.approx(s2U, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_estimate_beats_truth_likelihood(seed):
    y, X, br = simulate_oneway(80, 0.4, 1.0, seed)
    fit = fit_lmm_arrays(y, X, br, 10)
    assert fit.log_likelihood == pytest.approx(marginal_loglik(y, X, br, fit.beta, fit.sigma2_U,
                                                               fit.sigma2_combined), abs=1e-8)
    truth = marginal_loglik(y, X, br, np.array([1.0, 0.5, -0.3]), 0.4, 1.0)
    assert fit.log_likelihood >= truth - 1e-6


def test_zero_branch_variance_gives_zero_U():
    y, X, br = simulate_oneway(60, 0.0, 1.0, 1)
    U, V = blup(y, X, br, 10, np.zeros(3), 0.0, 1.0, 0.95)
    assert np.all(U == 0.0)


def test_single_branch_shrinkage():
    rng = np.random.default_rng(4)
    m, s2U, s2c = 12, 0.7, 1.3
    y = rng.normal(size=m)
    X = np.ones((m, 1))
    beta = np.array([0.2])
    br = np.zeros(m, dtype=int)
    U, V = blup(y, X, br, 1, beta, s2U, s2c, 0.95)
    expected = m * s2U / (m * s2U + s2c) * np.mean(y - 0.2)
    assert U[0] == pytest.approx(expected, abs=1e-12)
    # joint mixed-model system with fixed beta
    Z = np.hstack([np.ones((m, 1)), np.eye(m)])
    s2V, s2e = 0.95 * s2c, 0.05 * s2c
    G = np.diag(np.r_[1 / s2U, np.full(m, 1 / s2V)])
    sol = np.linalg.solve(Z.T @ Z + s2e * G, Z.T @ (y - 0.2))
    assert U[0] == pytest.approx(sol[0], abs=1e-10)
    assert np.allclose(V, sol[1:], atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_predict_effects_matches_henderson(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(15, 51))
    y, X, br = simulate_oneway(n, 2.0, 1.0, 1000 + seed)
    fit = fit_lmm_arrays(y, X, br, 10)
    assert fit.sigma2_U > 0  # the Henderson system needs an interior branch variance
    b, U, V = henderson(y, X, br, 10, fit.sigma2_U, fit.sigma2_V, fit.sigma2_eps)
    assert np.max(np.abs(b - fit.beta)) <= 1e-8
    assert np.max(np.abs(U - fit.predicted_U)) <= 1e-8
    assert np.max(np.abs(V - fit.predicted_V)) <= 1e-8


def _sim_cohort(n=200, seed=0):
    sc = SimScenario(n=n, Sigma_V=np.eye(8), seed=seed)
    return simulate_cohort(sc)[0]


def test_predicted_V_proportional_to_conditional_residual():
    cohort = _sim_cohort()
    fits = fit_all_gaussian(cohort)
    for label, fit in fits.items():
        r = conditional_residuals(fit, cohort)
        assert np.corrcoef(r, fit.predicted_V)[0, 1] == pytest.approx(1.0, abs=1e-12)
        U, V = predict_effects(fit, cohort)
        assert np.allclose(V, fit.predicted_V, atol=1e-12)


def test_predicted_U_sums_to_zero_with_intercept():
    cohort = _sim_cohort(300, 5)
    for fit in fit_all_gaussian(cohort).values():
        if fit.sigma2_U > 0:
            assert abs(float(np.sum(fit.predicted_U))) <= 1e-9 * max(1.0, np.max(np.abs(fit.predicted_U)))


@given(st.floats(0.1, 50.0), st.sampled_from([-1.0, 1.0]), st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_rescaling_response(c, sign, seed):
    y, X, br = simulate_oneway(60, 0.5, 1.0, seed)
    c = sign * c
    f1 = fit_lmm_arrays(y, X, br, 10)
    f2 = fit_lmm_arrays(c * y, X, br, 10)
    assert np.allclose(f2.beta, c * f1.beta, rtol=1e-5, atol=1e-6 * abs(c))
    assert f2.sigma2_combined == pytest.approx(c * c * f1.sigma2_combined, rel=1e-5)
    assert np.allclose(f2.predicted_V, c * f1.predicted_V, rtol=1e-4, atol=1e-5 * abs(c))
    z1 = f1.predicted_V / f1.predicted_V.std()
    z2 = f2.predicted_V / f2.predicted_V.std()
    assert np.allclose(z2, np.sign(c) * z1, atol=1e-4)


def test_residual_fraction_only_rescales():
    y, X, br = simulate_oneway(100, 0.5, 1.0, 9)
    a = fit_lmm_arrays(y, X, br, 10, residual_fraction=0.95)
    b = fit_lmm_arrays(y, X, br, 10, residual_fraction=0.4)
    assert np.corrcoef(a.predicted_V, b.predicted_V)[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(b.predicted_V, a.predicted_V * 0.4 / 0.95, atol=1e-12)
    assert a.sigma2_V == pytest.approx(0.95 * a.sigma2_combined)


def test_spec_rejects_survival_and_bad_fraction():
    cohort = _sim_cohort(30)
    with pytest.raises(ValueError):
        GaussianLmmSpec.for_cohort(cohort, "Geom")
    with pytest.raises(ValueError):
        GaussianLmmSpec.for_cohort(cohort, "Math", residual_fraction=0.0)


def test_degenerate_design_rejected():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(ValueError):
        fit_lmm_arrays(np.arange(5.0), X, np.zeros(5, dtype=int), 1)
