import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from drvar import DesignSpec, fit_or, fit_ps, or_scores, ps_scores
from drvar.errors import ConvergenceError, SingularSystemError, ValidationError
from drvar.nuisance import fit_nuisance


def _negloglik(psi, d, x):
    lin = d @ psi
    # log(1 + e^lin) computed stably
    return float(np.sum(np.logaddexp(0.0, lin) - x * lin))


def bernoulli_mle_bruteforce(d, x):
    """Independent MLE oracle: coarse grid search, then repeated simplex refinement."""
    k = d.shape[1]
    grid = np.linspace(-3, 3, 13)
    best = None
    for point in np.array(np.meshgrid(*[grid] * k)).reshape(k, -1).T:
        val = _negloglik(point, d, x)
        if best is None or val < best[0]:
            best = (val, point)
    start = best[1]
    for _ in range(6):
        res = minimize(_negloglik, start, args=(d, x), method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 40000, "maxfev": 40000})
        if np.allclose(res.x, start, atol=1e-12, rtol=0):
            break
        start = res.x
    return res.x


def _ps_fixture(seed, n, k):
    rng = np.random.default_rng(seed)
    d = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    beta = rng.uniform(-0.8, 0.8, size=k)
    x = (rng.random(n) < 1 / (1 + np.exp(-d @ beta))).astype(float)
    return d, x


PS_FIXTURES = [(1, 20, 2), (2, 35, 2), (3, 50, 3), (4, 75, 3), (5, 100, 3), (6, 60, 2)]


@pytest.mark.parametrize("seed,n,k", PS_FIXTURES)
def test_fit_ps_matches_bruteforce_likelihood_maximizer(seed, n, k):
    d, x = _ps_fixture(seed, n, k)
    fit = fit_ps(d, x)
    oracle = bernoulli_mle_bruteforce(d, x)
    assert fit.converged
    np.testing.assert_allclose(fit.psi_hat, oracle, atol=1e-6, rtol=0)


def _or_fixture(seed, n, k):
    rng = np.random.default_rng(100 + seed)
    d = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    y = d @ rng.normal(size=k) * 3 + rng.normal(size=n)
    return d, y


@pytest.mark.parametrize("seed,n,k", [(1, 20, 2), (2, 40, 3), (3, 60, 4), (4, 80, 5), (5, 100, 6)])
def test_fit_or_matches_normal_equations(seed, n, k):
    d, y = _or_fixture(seed, n, k)
    fit = fit_or(d, y)
    expected = np.linalg.solve(d.T @ d, d.T @ y)
    np.testing.assert_allclose(fit.xi_hat, expected, atol=1e-10, rtol=0)
    resid = y - d @ expected
    assert fit.sigma2_hat == pytest.approx(resid @ resid / (n - k), rel=1e-10)


def test_intercept_only_ps_is_logit_of_proportion():
    d = np.ones((4, 1))
    assert fit_ps(d, np.array([1.0, 0.0, 1.0, 0.0])).psi_hat[0] == pytest.approx(0.0, abs=1e-12)
    psi = fit_ps(d, np.array([1.0, 0.0, 0.0, 0.0])).psi_hat[0]
    assert psi == pytest.approx(np.log(0.25 / 0.75), abs=1e-9)


def test_ols_line():
    d = np.column_stack([np.ones(4), np.arange(4.0)])
    fit = fit_or(d, 1 + 2 * np.arange(4.0))
    np.testing.assert_allclose(fit.xi_hat, [1.0, 2.0], atol=1e-12)
    # exact interpolation: sigma^2 snaps to zero and unit score scale is used
    assert fit.sigma2_hat == 0.0 and fit.sigma2_substituted and fit.score_scale == 1.0


@pytest.mark.parametrize("seed,n,k", PS_FIXTURES[:3])
def test_score_means_vanish_at_fit(seed, n, k):
    d, x = _ps_fixture(seed, n, k)
    assert np.abs(ps_scores(fit_ps(d, x)).mean(axis=0)).max() < 1e-8
    d, y = _or_fixture(seed, n, k)
    assert np.abs(or_scores(fit_or(d, y)).mean(axis=0)).max() < 1e-10


def test_rank_deficient_designs():
    d = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(SingularSystemError):
        fit_or(d, np.arange(10.0))
    with pytest.raises(SingularSystemError):
        fit_ps(d, np.tile([0.0, 1.0], 5))


def test_complete_separation_does_not_converge():
    z = np.arange(10.0)
    d = np.column_stack([np.ones(10), z])
    with pytest.raises(ConvergenceError) as info:
        fit_ps(d, (z > 4.5).astype(float))
    assert info.value.last_iterate is not None


def test_constant_treatment_rejected():
    with pytest.raises(ValidationError):
        fit_ps(np.ones((5, 1)), np.ones(5))


def test_fit_nuisance_clamps_and_predicts(toy_ds, toy_specs):
    fits = fit_nuisance(toy_ds, *toy_specs)
    assert np.all((fits.eta > 0) & (fits.eta < 1))
    # OR has an additive x term, so Q1 - Q0 is its coefficient everywhere
    np.testing.assert_allclose(fits.q1 - fits.q0, fits.outcome.xi_hat[-1], rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(perm_seed=st.integers(0, 2**32 - 1), fixture=st.sampled_from(PS_FIXTURES))
def test_fits_invariant_to_row_order(perm_seed, fixture):
    d, x = _ps_fixture(*fixture)
    perm = np.random.default_rng(perm_seed).permutation(d.shape[0])
    np.testing.assert_allclose(fit_ps(d[perm], x[perm]).psi_hat, fit_ps(d, x).psi_hat, atol=1e-9)
    d2, y = _or_fixture(*fixture)
    np.testing.assert_allclose(fit_or(d2[perm], y[perm]).xi_hat, fit_or(d2, y).xi_hat, atol=1e-9)
