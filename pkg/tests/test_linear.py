import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.optimize import minimize

from kgite.imputation import ImputationError, fit_imputer, impute
from kgite.logistic import DegenerateFitError
from kgite.seqmodels import fit_glm, fit_lm, fit_random_intercept, wald_pvalues


def _logit_data(rng, n=400, d=3):
    X = rng.normal(size=(n, d)) * np.linspace(0.5, 4, d) + 2.0
    beta = rng.normal(size=d)
    y = (rng.random(n) < 1 / (1 + np.exp(-((X - 2.0) @ beta) - 0.3))).astype(float)
    return X, y


def test_glm_ridge_matches_direct_minimisation(rng):
    X, y = _logit_data(rng)
    m = fit_glm(X, y, ridge=2.5)
    mu, sd = X.mean(0), X.std(0)
    S = (X - mu) / sd

    def f(th):
        eta = S @ th[1:] + th[0]
        return np.sum(np.logaddexp(0, eta) - y * eta) + 1.25 * th[1:] @ th[1:]

    th = minimize(f, np.zeros(X.shape[1] + 1), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(m.coef, th[1:] / sd, rtol=1e-5)


def test_unpenalised_glm_standard_errors_from_fisher_information(rng):
    X, y = _logit_data(rng)
    m = fit_glm(X, y, ridge=0.0)
    X1 = np.column_stack([np.ones(len(X)), X])
    p = m.predict(X)
    info = X1.T @ (X1 * (p * (1 - p))[:, None])
    cov = np.linalg.inv(info)
    np.testing.assert_allclose(m.cov, cov, rtol=1e-6)
    z = m.coef / np.sqrt(np.diag(cov)[1:])
    np.testing.assert_allclose(wald_pvalues(m), 2 * stats.norm.sf(np.abs(z)), rtol=1e-6)


def test_null_wald_pvalues_are_uniform():
    rng = np.random.default_rng(5)
    pv = []
    for _ in range(40):
        X = rng.normal(size=(300, 5))
        y = (rng.random(300) < 0.3).astype(float)
        pv.append(wald_pvalues(fit_glm(X, y, ridge=0.0)))
    assert stats.kstest(np.concatenate(pv), "uniform").pvalue > 0.01


def test_wald_index_checks(rng):
    X, y = _logit_data(rng)
    m = fit_glm(X, y)
    assert wald_pvalues(m, [0, 2]).shape == (2,)
    with pytest.raises(IndexError):
        wald_pvalues(m, [3])


def test_single_class_labels_are_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_glm(np.ones((10, 2)), np.zeros(10))


def test_lm_matches_lstsq(rng):
    X = rng.normal(size=(200, 4)) * [1, 10, 0.1, 3]
    y = X @ [1.0, -0.2, 5.0, 0.0] + 3 + rng.normal(size=200)
    m = fit_lm(X, y)
    X1 = np.column_stack([np.ones(200), X])
    b, *_ = np.linalg.lstsq(X1, y, rcond=None)
    np.testing.assert_allclose(m.coef, b[1:], rtol=1e-8)
    assert m.intercept == pytest.approx(b[0], rel=1e-8)
    resid = y - X1 @ b
    s2 = resid @ resid / (200 - 5)
    np.testing.assert_allclose(m.cov, s2 * np.linalg.inv(X1.T @ X1), rtol=1e-6, atol=1e-12)
    assert m.residual_var == pytest.approx(s2)


def test_lm_survives_collinear_columns(rng):
    x = rng.normal(size=(50, 1))
    X = np.hstack([x, 2 * x, rng.normal(size=(50, 1))])
    y = x[:, 0] + rng.normal(size=50) * 0.1
    m = fit_lm(X, y)
    assert np.all(np.isfinite(m.coef)) and m.ridge > 0
    np.testing.assert_allclose(m.predict(X), fit_lm(X[:, [0, 2]], y).predict(X[:, [0, 2]]), atol=1e-4)


# --------------------------------------------------------------------------
# random intercepts
# --------------------------------------------------------------------------


def _grouped(rng, G, n_per, var_u, family):
    ids = np.repeat([f"p{i:03d}" for i in range(G)], n_per)
    X = rng.normal(size=(G * n_per, 2))
    u = rng.normal(scale=np.sqrt(var_u), size=G).repeat(n_per)
    eta = X @ [0.7, -0.4] + 0.2 + u
    if family == "gaussian":
        return X, eta + rng.normal(scale=0.5, size=len(eta)), ids
    return X, (rng.random(len(eta)) < 1 / (1 + np.exp(-eta))).astype(float), ids


def _lmm_reml(X, y, ids):
    """Restricted likelihood of the Gaussian random-intercept model, optimised directly."""
    groups = [np.flatnonzero(ids == g) for g in np.unique(ids)]
    X1 = np.column_stack([np.ones(len(X)), X])

    def parts(th):
        vu, ve = np.exp(th)
        XVX, XVy, logdet, blocks = 0.0, 0.0, 0.0, []
        for idx in groups:
            Vinv = np.linalg.inv(ve * np.eye(len(idx)) + vu)
            XVX = XVX + X1[idx].T @ Vinv @ X1[idx]
            XVy = XVy + X1[idx].T @ Vinv @ y[idx]
            logdet -= np.linalg.slogdet(Vinv)[1]
            blocks.append((idx, Vinv))
        beta = np.linalg.solve(XVX, XVy)
        return beta, XVX, logdet, blocks

    def nll(th):
        beta, XVX, logdet, blocks = parts(th)
        quad = sum(float(r @ Vi @ r) for r, Vi in ((y[i] - X1[i] @ beta, Vi) for i, Vi in blocks))
        return 0.5 * (logdet + quad + np.linalg.slogdet(XVX)[1])

    res = minimize(nll, np.zeros(2), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
    return parts(res.x)[0], np.exp(res.x[0]), np.exp(res.x[1])


def test_gaussian_random_intercept_is_restricted_maximum_likelihood():
    rng = np.random.default_rng(9)
    X, y, ids = _grouped(rng, 40, 5, 0.8, "gaussian")
    m = fit_random_intercept(X, y, ids, family="gaussian", ridge=0.0, max_outer=5000, tol=1e-12)
    beta, vu, ve = _lmm_reml(X, y, ids)
    assert m.converged
    np.testing.assert_allclose(m.coef, beta[1:], rtol=1e-4)
    assert m.intercept == pytest.approx(beta[0], rel=1e-4, abs=1e-5)
    assert m.intercept_var == pytest.approx(vu, rel=1e-3)
    assert m.residual_var == pytest.approx(ve, rel=1e-3)


def test_binomial_random_intercept_tracks_heterogeneity():
    rng = np.random.default_rng(2)
    X, y, ids = _grouped(rng, 150, 20, 1.5, "binomial")
    m = fit_random_intercept(X, y, ids, ridge=0.0)
    assert 0.7 < m.intercept_var < 2.5
    np.testing.assert_allclose(m.coef, [0.7, -0.4], atol=0.2)
    X0, y0, ids0 = _grouped(rng, 150, 20, 0.0, "binomial")
    assert fit_random_intercept(X0, y0, ids0, ridge=0.0).intercept_var < 0.05


def test_mixed_predict_uses_known_intercepts():
    rng = np.random.default_rng(4)
    X, y, ids = _grouped(rng, 30, 6, 1.0, "gaussian")
    m = fit_random_intercept(X, y, ids, family="gaussian")
    base = m.predict(X[:3])
    shifted = m.predict(X[:3], patient_ids=ids[:3])
    np.testing.assert_allclose(shifted - base, m.random_intercepts[ids[0]])
    np.testing.assert_allclose(m.predict(X[:3], patient_ids=["new"] * 3), base)


# --------------------------------------------------------------------------
# imputation
# --------------------------------------------------------------------------


def _locf_oracle(v, fill):
    out = v.copy()
    P, T, L = v.shape
    for p in range(P):
        for l in range(L):
            last = np.nan
            for t in range(T):
                if np.isnan(v[p, t, l]):
                    out[p, t, l] = fill[l] if np.isnan(last) else last
                else:
                    last = v[p, t, l]
    return out


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_imputation_matches_loop_oracle(seed, miss):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(4, 7, 3))
    v[rng.random(v.shape) < miss] = np.nan
    v[0, 0, :] = 1.0  # each lab observed somewhere
    stats_ = fit_imputer(v)
    np.testing.assert_array_equal(impute(v, stats_), _locf_oracle(v, stats_.lab_means))


def test_fallback_means_come_from_fitting_patients():
    v = np.full((2, 3, 1), np.nan)
    v[0, 1, 0] = 4.0
    v[1, 2, 0] = 10.0
    assert fit_imputer(v, [0]).lab_means[0] == 4.0
    out = impute(v, fit_imputer(v, [0]))
    np.testing.assert_array_equal(out[:, :, 0], [[4, 4, 4], [4, 4, 10]])
    with pytest.raises(ImputationError):
        fit_imputer(np.full((1, 2, 1), np.nan))


def test_locf_kernel_flavours_agree():
    from kgite import kernels

    rng = np.random.default_rng(0)
    v = rng.normal(size=(30, 20, 6))
    v[rng.random(v.shape) < 0.6] = np.nan
    fill = rng.normal(size=6)
    np.testing.assert_array_equal(kernels.locf_loop(v, fill), kernels.locf_numpy(v, fill))
