import itertools
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import norm

from cfqe.errors import (
    ConvergenceError,
    DegenerateResponseError,
    EstimationError,
    SingularDesignError,
)
from cfqe.regress import (
    binary_mle,
    check_loss,
    cox_fit,
    cqr_fit,
    logvar_fit,
    qr_fit,
    wls_fit,
)


def normal_equation_oracle(X, y, w):
    """Dense-elimination solve of the weighted normal equations."""
    XtW = X.T * w
    return np.linalg.solve(XtW @ X, XtW @ y)


class TestWls:
    def test_intercept_only_mean(self):
        assert wls_fit(np.ones((3, 1)), np.array([5.0, 5.0, 5.0]))[0] == pytest.approx(5.0)

    def test_exact_line(self):
        X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
        beta = wls_fit(X, np.array([1.0, 3.0, 5.0]))
        assert np.allclose(beta, [1.0, 2.0])

    def test_normal_equation_oracle(self):
        rng = np.random.default_rng(11)
        X = np.column_stack([np.ones(10), rng.normal(size=(10, 2))])
        y = rng.normal(size=10)
        w = rng.uniform(0.5, 2.0, 10)
        beta = wls_fit(X, y, w)
        expected = normal_equation_oracle(X, y, w)
        assert np.allclose(beta, expected, rtol=1e-8, atol=1e-10)
        # normal equations hold to 1e-8 relative residual
        resid = X.T @ (w * (y - X @ beta))
        assert np.max(np.abs(resid)) <= 1e-8 * (1 + np.abs(X.T @ (w * y)).max())

    def test_singular_design(self):
        X = np.column_stack([np.ones(5), np.full(5, 2.0)])
        with pytest.raises(SingularDesignError, match="1e-12"):
            wls_fit(X, np.arange(5.0))

    def test_weight_rescaling_invariance(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(12), rng.normal(size=12)])
        y = rng.normal(size=12)
        w = rng.uniform(0.1, 1.0, 12)
        assert np.allclose(wls_fit(X, y, w), wls_fit(X, y, 7.3 * w))

    def test_outcome_scale_equivariance(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(15), rng.normal(size=15)])
        y = rng.normal(size=15)
        assert np.allclose(3.5 * wls_fit(X, y), wls_fit(X, 3.5 * y))


def qr_enumeration_oracle(X, y, w, u):
    """Best objective over all interpolating basic solutions.

    A quantile-regression optimum passes through d_x observations, so the
    optimal objective equals the best over all size-d_x interpolations.
    """
    n, d = X.shape
    best = np.inf
    for rows in itertools.combinations(range(n), d):
        sub = X[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        beta = np.linalg.solve(sub, y[list(rows)])
        best = min(best, check_loss(y - X @ beta, u, w))
    return best


class TestQr:
    def test_intercept_only_median(self):
        beta = qr_fit(np.ones((3, 1)), np.array([1.0, 2.0, 9.0]), u=0.5)
        assert beta[0] == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.parametrize("u", [0.2, 0.5, 0.8])
    def test_exact_line_any_u(self, u):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 5.0, 25)
        X = np.column_stack([np.ones(25), x])
        beta = qr_fit(X, 1.0 + 2.0 * x, u=u)
        assert np.allclose(beta, [1.0, 2.0], atol=1e-7)

    def test_enumeration_oracle(self):
        rng = np.random.default_rng(21)
        X = np.column_stack([np.ones(7), rng.normal(size=7)])
        y = rng.normal(size=7)
        w = rng.uniform(0.5, 1.5, 7)
        beta = qr_fit(X, y, w, u=0.3)
        obj = check_loss(y - X @ beta, 0.3, w)
        best = qr_enumeration_oracle(X, y, w, 0.3)
        assert obj <= best * (1 + 1e-6) + 1e-12

    def test_subgradient_certificate(self):
        rng = np.random.default_rng(8)
        n = 60
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.normal(size=n)
        w = rng.uniform(0.2, 2.0, n)
        u = 0.35
        r = y - X @ qr_fit(X, y, w, u)
        w_neg = w[r < -1e-9].sum()
        w_pos = w[r > 1e-9].sum()
        assert w_neg <= u * w.sum() + 1e-9
        assert w_pos <= (1 - u) * w.sum() + 1e-9

    def test_outcome_scale_equivariance_objective(self):
        rng = np.random.default_rng(9)
        n = 30
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.normal(size=n)
        c = 4.2
        b1 = qr_fit(X, y, u=0.4)
        b2 = qr_fit(X, c * y, u=0.4)
        # argmin scaling: c * beta attains the optimum of the scaled problem
        assert check_loss(c * y - X @ (c * b1), 0.4, np.ones(n)) == pytest.approx(
            check_loss(c * y - X @ b2, 0.4, np.ones(n)), rel=1e-8
        )

    def test_weight_rescaling_invariance(self):
        rng = np.random.default_rng(10)
        n = 25
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.normal(size=n)
        w = rng.uniform(0.5, 2.0, n)
        obj1 = check_loss(y - X @ qr_fit(X, y, w, 0.6), 0.6, w)
        obj2 = check_loss(y - X @ qr_fit(X, y, 3.0 * w, 0.6), 0.6, w)
        assert obj1 == pytest.approx(obj2, rel=1e-9)

    def test_invalid_u(self):
        with pytest.raises(ValueError):
            qr_fit(np.ones((3, 1)), np.arange(3.0), u=1.2)

    def test_singular_design(self):
        X = np.column_stack([np.ones(6), np.ones(6)])
        with pytest.raises(SingularDesignError):
            qr_fit(X, np.arange(6.0), u=0.5)


def binary_loglik(beta, X, z, w, link):
    eta = X @ beta
    if link == "logit":
        return np.sum(w * (z * eta - np.logaddexp(0.0, eta)))
    return np.sum(w * (z * norm.logcdf(eta) + (1 - z) * norm.logcdf(-eta)))


def newton_oracle(X, z, w, link, seed=0, starts=5):
    """Multi-start quasi-Newton maximization of the hand-written likelihood."""
    rng = np.random.default_rng(seed)
    best, best_ll = None, -np.inf
    for k in range(starts):
        x0 = np.zeros(X.shape[1]) if k == 0 else rng.normal(scale=0.5, size=X.shape[1])
        res = minimize(
            lambda b: -binary_loglik(b, X, z, w, link),
            x0,
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": 500},
        )
        if -res.fun > best_ll:
            best_ll, best = -res.fun, res.x
    return best


class TestBinaryMle:
    def test_logit_intercept_closed_form(self):
        z = np.array([1.0, 0.0, 0.0, 0.0] * 5)
        fit = binary_mle(np.ones((20, 1)), z, link="logit")
        assert fit.beta[0] == pytest.approx(np.log(0.25 / 0.75), abs=1e-8)
        assert not fit.separated

    def test_probit_intercept_half(self):
        z = np.array([1.0, 0.0] * 10)
        fit = binary_mle(np.ones((20, 1)), z, link="probit")
        assert fit.beta[0] == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("link", ["logit", "probit"])
    def test_multistart_newton_oracle(self, link):
        rng = np.random.default_rng(14)
        n = 20
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        z = (rng.uniform(size=n) < 1 / (1 + np.exp(-(0.3 + 0.8 * X[:, 1])))).astype(float)
        if z.min() == z.max():
            z[0] = 1 - z[0]
        w = rng.uniform(0.5, 1.5, n)
        fit = binary_mle(X, z, w, link=link)
        oracle = newton_oracle(X, z, w, link)
        assert np.allclose(fit.beta, oracle, atol=1e-6)

    def test_degenerate_all_ones(self):
        with pytest.raises(DegenerateResponseError) as exc:
            binary_mle(np.ones((5, 1)), np.ones(5))
        assert exc.value.value == 1.0

    def test_degenerate_all_zero_weighted(self):
        # degeneracy is judged on positive-weight rows only
        z = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, 1.0, 1.0])
        with pytest.raises(DegenerateResponseError) as exc:
            binary_mle(np.ones((3, 1)), z, w)
        assert exc.value.value == 0.0

    def test_perfect_separation_flagged(self):
        x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        X = np.column_stack([np.ones(6), x])
        z = (x > 0).astype(float)
        fit = binary_mle(X, z, link="logit")
        assert fit.separated
        assert np.all(np.isfinite(fit.beta))

    def test_intercept_score_identity(self):
        rng = np.random.default_rng(15)
        n = 80
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        z = (rng.uniform(size=n) < 0.4).astype(float)
        w = rng.uniform(0.5, 2.0, n)
        fit = binary_mle(X, z, w, link="logit")
        p = 1 / (1 + np.exp(-(X @ fit.beta)))
        assert np.average(p, weights=w) == pytest.approx(np.average(z, weights=w), abs=1e-8)


def cox_partial_loglik(beta, X, y, w):
    """Hand-written Breslow partial likelihood in the stored convention
    (hazard index is -x'beta)."""
    eta = -(X @ np.atleast_1d(beta))
    order = np.argsort(y, kind="stable")
    ys, es, ws = y[order], eta[order], w[order]
    ll = 0.0
    for i in range(len(ys)):
        risk = ys >= ys[i] - 1e-12
        ll += ws[i] * (es[i] - np.log(np.sum(ws[risk] * np.exp(es[risk]))))
    return ll


class TestCox:
    def test_constant_covariates_reduce_to_nelson_aalen(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = cox_fit(np.ones((4, 1)), y)
        assert fit.nonidentified == (0,)
        assert np.allclose(fit.beta, 0.0)
        nelson_aalen = np.cumsum(1.0 / np.arange(4, 0, -1))
        assert np.allclose(fit.cum_hazard, nelson_aalen)
        # F(y|x) = 1 - exp(-H(y)) when all coefficients vanish
        assert np.allclose(1 - np.exp(-fit.baseline_at(y)), 1 - np.exp(-nelson_aalen))

    def test_one_dim_grid_oracle(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        fit = cox_fit(X, y)
        grid = np.arange(-10.0, 10.0, 1e-4)
        values = [cox_partial_loglik(b, X, y, np.ones(4)) for b in grid]
        assert fit.beta[0] == pytest.approx(grid[int(np.argmax(values))], abs=1e-3)

    def test_multistart_newton_oracle(self):
        rng = np.random.default_rng(23)
        n, d = 6, 2
        X = rng.normal(size=(n, d))
        y = rng.exponential(size=n)
        w = rng.uniform(0.5, 1.5, n)
        fit = cox_fit(X, y, w)
        best, best_ll = None, -np.inf
        for k in range(5):
            x0 = np.zeros(d) if k == 0 else rng.normal(scale=0.5, size=d)
            res = minimize(
                lambda b: -cox_partial_loglik(b, X, y, w),
                x0,
                method="Nelder-Mead",
                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000},
            )
            if -res.fun > best_ll:
                best_ll, best = -res.fun, res.x
        assert np.allclose(fit.beta, best, atol=1e-5)

    def test_baseline_nondecreasing_and_zero_before_first_event(self):
        rng = np.random.default_rng(31)
        n = 40
        X = rng.normal(size=(n, 2))
        y = rng.gamma(2.0, 1.0, n)
        fit = cox_fit(X, y)
        assert np.all(np.diff(fit.cum_hazard) >= 0)
        assert fit.baseline_at(np.array([y.min() - 1.0]))[0] == 0.0

    def test_negative_durations_rejected(self):
        with pytest.raises(EstimationError, match="nonnegative"):
            cox_fit(np.ones((3, 1)), np.array([-1.0, 1.0, 2.0]))

    def test_ties_handled(self):
        y = np.array([1.0, 1.0, 2.0, 2.0, 3.0])
        X = np.array([[0.0], [1.0], [0.0], [1.0], [1.0]])
        fit = cox_fit(X, y)
        assert len(fit.event_times) == 3
        assert np.all(np.isfinite(fit.beta))


def cqr_recipe_oracle(X, y, w, u, cens, right, nsteps, firstc, secondc):
    """Independent re-implementation of the three-step recipe.

    Censoring probabilities come from a BFGS logit (not the package IRLS);
    the selection logic is written from scratch against the pinned reading.
    """
    cens = cens.astype(bool)
    if not cens.any():
        pihat = np.zeros(len(y))
    elif cens.all():
        pihat = np.ones(len(y))
    else:
        beta_l = newton_oracle(X, cens.astype(float), w, "logit", starts=3)
        pihat = 1 / (1 + np.exp(-(X @ beta_l)))
    cut = 1 - u if right else u
    usable = pihat < cut
    if not usable.any():
        raise RuntimeError("empty step 1")
    keep = usable & (pihat <= np.quantile(pihat[usable], 1 - firstc))
    beta = qr_fit(X[keep], y[keep], w[keep], u)
    for _ in range(nsteps - 2):
        pred = X @ beta
        margin = (y - pred) if right else (pred - y)
        keep = ~cens | (margin > 0)
        keep = keep & (margin >= np.quantile(margin[keep], secondc))
        beta = qr_fit(X[keep], y[keep], w[keep], u)
    return beta


class TestCqr:
    def test_uncensored_equals_qr_without_trimming(self):
        rng = np.random.default_rng(1)
        n = 40
        x = rng.normal(size=n)
        y = 1 + x + rng.normal(size=n)
        X = np.column_stack([np.ones(n), x])
        beta_qr = qr_fit(X, y, u=0.7)
        beta_cqr = cqr_fit(X, y, u=0.7, censoring=np.zeros(n), firstc=0.0, secondc=0.0)
        assert np.allclose(beta_qr, beta_cqr)

    def test_all_censored_errors(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        with pytest.raises(EstimationError, match="step-1"):
            cqr_fit(X, np.arange(5.0), u=0.5, censoring=np.ones(5))

    def test_recipe_oracle_left_censored(self):
        rng = np.random.default_rng(42)
        n = 50
        x = rng.normal(size=n)
        latent = 0.5 + 1.2 * x + rng.normal(size=n)
        y = np.maximum(latent, 0.0)          # left-censored at 0
        cens = (latent < 0.0).astype(int)    # 1 = censored
        X = np.column_stack([np.ones(n), x])
        w = rng.uniform(0.5, 1.5, n)
        beta = cqr_fit(X, y, w, u=0.7, censoring=cens, right=False)
        oracle = cqr_recipe_oracle(X, y, w, 0.7, cens, False, 3, 0.1, 0.05)
        assert np.allclose(beta, oracle, atol=1e-6)

    def test_recipe_oracle_right_censored_more_steps(self):
        rng = np.random.default_rng(43)
        n = 60
        x = rng.normal(size=n)
        latent = 1.0 + 0.8 * x + rng.normal(size=n)
        y = np.minimum(latent, 2.0)
        cens = (latent > 2.0).astype(int)
        X = np.column_stack([np.ones(n), x])
        beta = cqr_fit(X, y, u=0.3, censoring=cens, right=True, nsteps=5)
        oracle = cqr_recipe_oracle(X, y, np.ones(n), 0.3, cens, True, 5, 0.1, 0.05)
        assert np.allclose(beta, oracle, atol=1e-6)

    def test_censoring_required(self):
        with pytest.raises(ValueError, match="censoring"):
            cqr_fit(np.ones((5, 1)), np.arange(5.0), u=0.5, censoring=None)


class TestLogVar:
    def test_equal_magnitude_residuals(self):
        gamma = logvar_fit(np.ones((4, 1)), np.array([2.0, -2.0, 2.0, -2.0]))
        assert gamma[0] == pytest.approx(np.log(4.0))

    def test_normal_equation_oracle(self):
        rng = np.random.default_rng(33)
        X2 = np.column_stack([np.ones(8), rng.normal(size=8)])
        resid = rng.normal(size=8)
        w = rng.uniform(0.5, 1.5, 8)
        gamma = logvar_fit(X2, resid, w)
        expected = normal_equation_oracle(X2, np.log(resid**2), w)
        assert np.allclose(gamma, expected, rtol=1e-8)

    def test_zero_residual_floored_with_warning(self):
        with pytest.warns(UserWarning, match="floored"):
            gamma = logvar_fit(np.ones((3, 1)), np.array([0.0, 1.0, -1.0]))
        assert np.isfinite(gamma).all()

    def test_heteroskedastic_slope_recovery(self):
        rng = np.random.default_rng(77)
        n = 10000
        x = rng.uniform(-1.0, 1.0, n)
        resid = np.exp(x / 2.0) * rng.normal(size=n)
        X2 = np.column_stack([np.ones(n), x])
        gamma = logvar_fit(X2, resid, np.ones(n))
        assert gamma[1] == pytest.approx(1.0, abs=0.1)
