"""Numerical estimation cores.

Weighted least squares, quantile regression (exact LP), binary-response
maximum likelihood (logit/probit), Cox partial likelihood with the Breslow
baseline, the three-step censored quantile regression, and the log-variance
regression used by the location-scale model.

All fits are pure functions of their inputs and can run concurrently; weights
enter every objective as per-observation multipliers.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import expit
from scipy.stats import norm

from .errors import (
    ConvergenceError,
    DegenerateResponseError,
    EstimationError,
    SingularDesignError,
)

# Reciprocal-condition cutoff for the weighted cross-product matrix X'WX.
SINGULAR_RCOND = 1e-12
# Linear-predictor cap used when binary likelihoods separate.
ETA_CAP = 30.0
# Floor applied to squared residuals before taking logs in logvar_fit.
RESIDUAL_SQ_FLOOR = 1e-300


def _check_design(X, w):
    """Raise SingularDesignError when rcond(X'WX) falls below the cutoff."""
    Xw = X * np.sqrt(w)[:, None]
    s = np.linalg.svd(Xw, compute_uv=False)
    if s[0] == 0.0:
        raise SingularDesignError(0.0, SINGULAR_RCOND)
    rcond = (s[-1] / s[0]) ** 2
    if not np.isfinite(rcond) or rcond < SINGULAR_RCOND:
        raise SingularDesignError(rcond, SINGULAR_RCOND)


def wls_fit(X, y, w=None):
    """Weighted least squares: minimize sum_i w_i (y_i - x_i'b)^2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if n < d:
        raise EstimationError(f"need at least {d} rows, got {n}")
    _check_design(X, w)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return beta


def check_loss(residuals, u, w):
    """Quantile-regression objective sum_i w_i (u - 1{r_i <= 0}) r_i."""
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(w * r * (u - (r <= 0))))


def _qr_primal(X, y, w, u):
    n, d = X.shape
    c = np.concatenate([np.zeros(d), u * w, (1.0 - u) * w])
    A = sparse.hstack(
        [sparse.csc_matrix(X), sparse.eye(n, format="csc"), -sparse.eye(n, format="csc")],
        format="csc",
    )
    bounds = [(None, None)] * d + [(0.0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise ConvergenceError(
            f"quantile regression LP failed: {res.message}", iterations=res.nit
        )
    return res.x[:d]


def _qr_polish(X, y, w, u, beta):
    """Snap an LP solution onto the exact interpolating vertex.

    An optimal basic solution interpolates d observations; re-solving on the
    d smallest-residual rows removes solver roundoff (so indicator-based CDF
    constructions see crisp ties). Kept only when it does not worsen the
    objective."""
    d = X.shape[1]
    r = y - X @ beta
    rows = np.argsort(np.abs(r), kind="stable")[:d]
    sub = X[rows]
    if abs(np.linalg.det(sub)) < 1e-12:
        return beta
    try:
        cand = np.linalg.solve(sub, y[rows])
    except np.linalg.LinAlgError:
        return beta
    obj = check_loss(r, u, w)
    if check_loss(y - X @ cand, u, w) <= obj + 1e-9 * (1.0 + abs(obj)):
        return cand
    return beta


def qr_fit(X, y, w=None, u=0.5):
    """Quantile regression at index u via exact linear programming.

    Solves the bounded dual (n variables, d equality rows) and reads the
    coefficient vector off the equality multipliers; a strong-duality gap
    check guards the recovery, falling back to the primal LP if it fails.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0.0 < u < 1.0:
        raise ValueError("quantile index u must lie strictly between 0 and 1")
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if n < d:
        raise EstimationError(f"need at least {d} rows, got {n}")
    _check_design(X, w)

    M = (X * w[:, None]).T
    res = linprog(
        w * y,
        A_eq=M,
        b_eq=u * M.sum(axis=1),
        bounds=(0.0, 1.0),
        method="highs",
    )
    beta = None
    if res.success:
        cand = np.asarray(res.eqlin.marginals, dtype=float)
        dual_obj = u * np.dot(w, y) - res.fun
        primal_obj = check_loss(y - X @ cand, u, w)
        if abs(primal_obj - dual_obj) <= 1e-7 * (1.0 + abs(dual_obj)):
            beta = cand
    if beta is None:
        beta = _qr_primal(X, y, w, u)
    return _qr_polish(X, y, w, u, beta)


@dataclass
class BinaryFit:
    """Binary MLE result; ``separated`` marks a capped, non-converged fit."""

    beta: np.ndarray
    separated: bool = False


def _binary_loglik(eta, z, w, link):
    if link == "logit":
        return float(np.sum(w * (z * eta - np.logaddexp(0.0, eta))))
    return float(np.sum(w * (z * norm.logcdf(eta) + (1.0 - z) * norm.logcdf(-eta))))


def _binary_score_info(eta, z, w, link):
    """Gradient factor and Fisher weights for one IRLS step."""
    if link == "logit":
        p = expit(eta)
        return w * (z - p), w * np.maximum(p * (1.0 - p), 1e-12)
    p = np.clip(norm.cdf(eta), 1e-12, 1.0 - 1e-12)
    phi = norm.pdf(eta)
    v = p * (1.0 - p)
    return w * (z - p) * phi / v, w * np.maximum(phi * phi / v, 1e-12)


def binary_mle(X, z, w=None, link="logit", beta0=None, max_iter=100):
    """Weighted binary-response MLE with logit or probit link.

    Maximizes sum_i w_i [z_i log L(x_i'b) + (1 - z_i) log L(-x_i'b)].
    Convergence: max-norm of the score <= 1e-8 * n. Perfect separation is
    handled by capping |x'b| at ETA_CAP and returning a flagged result.
    """
    if link not in ("logit", "probit"):
        raise ValueError(f"unknown link: {link!r}")
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if n < d:
        raise EstimationError(f"need at least {d} rows, got {n}")
    active = w > 0
    if np.all(z[active] == 1.0):
        raise DegenerateResponseError(1.0)
    if np.all(z[active] == 0.0):
        raise DegenerateResponseError(0.0)

    tol = 1e-8 * n
    beta = np.zeros(d) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    eta = X @ beta
    ll = _binary_loglik(eta, z, w, link)
    if not np.isfinite(ll):
        beta = np.zeros(d)
        eta = X @ beta
        ll = _binary_loglik(eta, z, w, link)
    grad_norm = np.inf
    for _ in range(max_iter):
        score_fac, fisher_w = _binary_score_info(eta, z, w, link)
        grad = X.T @ score_fac
        grad_norm = np.max(np.abs(grad))
        if grad_norm <= tol:
            # a solution living at extreme linear predictors is (numerically)
            # separated; the flag is diagnostic, the MLE itself is returned
            return BinaryFit(beta=beta, separated=bool(np.max(np.abs(eta)) >= ETA_CAP))
        H = (X * fisher_w[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        # near the optimum ll comparisons hit rounding, so allow a tiny slack
        slack = 1e-9 * (1.0 + abs(ll))
        while t > 2.0**-30:
            cand = beta + t * step
            eta_cand = X @ cand
            ll_cand = _binary_loglik(eta_cand, z, w, link)
            if np.isfinite(ll_cand) and ll_cand >= ll - slack:
                beta, eta, ll = cand, eta_cand, ll_cand
                break
            t *= 0.5
        else:
            break
    max_eta = np.max(np.abs(eta))
    if max_eta >= 0.9 * ETA_CAP:
        # divergence containment for perfect separation: pull the iterate back
        # to the cap and flag it; the fitted CDF saturates numerically there
        if max_eta > ETA_CAP:
            beta = beta * (ETA_CAP / max_eta)
        return BinaryFit(beta=beta, separated=True)
    score_fac, _ = _binary_score_info(eta, z, w, link)
    grad_norm = np.max(np.abs(X.T @ score_fac))
    if grad_norm <= tol:
        return BinaryFit(beta=beta, separated=False)
    raise ConvergenceError(
        "binary MLE did not converge", iterations=max_iter, grad_norm=grad_norm
    )


@dataclass
class CoxFit:
    """Cox fit in the transformation-model convention.

    ``beta`` indexes the conditional CDF as
    F(y|x) = 1 - exp(-exp(log H0(y) - x'beta)), i.e. beta is the negative of
    the conventional proportional-hazards coefficient. ``cum_hazard`` is the
    Breslow cumulative-hazard step function at the distinct event times
    (0 before the first event). Coefficients of constant covariate columns
    are not identified; they are set to 0 and listed in ``nonidentified``.
    """

    beta: np.ndarray
    event_times: np.ndarray
    cum_hazard: np.ndarray
    nonidentified: tuple = ()

    def baseline_at(self, y):
        """Cumulative hazard H0 at each y (cadlag step lookup)."""
        idx = np.searchsorted(self.event_times, np.atleast_1d(y), side="right")
        padded = np.concatenate([[0.0], self.cum_hazard])
        return padded[idx]


def _cox_negloglik_parts(Xg, y, w, gamma):
    """Breslow partial likelihood pieces in the standard convention.

    Returns (-loglik, gradient, hessian) for hazard h0(y) exp(x'gamma).
    Rows must be sorted by ascending y.
    """
    eta = Xg @ gamma
    eta = np.clip(eta, -500, 500)
    r = w * np.exp(eta)
    # risk-set sums over {l: y_l >= y_i}: reverse cumulative sums
    S0 = np.cumsum(r[::-1])[::-1]
    S1 = np.cumsum((r[:, None] * Xg)[::-1], axis=0)[::-1]
    S2 = np.cumsum((r[:, None, None] * (Xg[:, :, None] * Xg[:, None, :]))[::-1], axis=0)[
        ::-1
    ]
    # Breslow ties: events at the same time share the risk set of the first
    first_idx = np.searchsorted(y, y, side="left")
    S0 = S0[first_idx]
    S1 = S1[first_idx]
    S2 = S2[first_idx]
    # zero-weight rows contribute nothing and may sit atop empty risk sets
    active = w > 0
    S0safe = np.where(active, S0, 1.0)
    ll = np.sum(w[active] * (eta[active] - np.log(S0safe[active])))
    grad = Xg.T @ w - np.sum((w / S0safe)[:, None] * S1, axis=0)
    Ebar = S1 / S0safe[:, None]
    hess = -np.sum(
        (w / S0safe)[:, None, None] * S2
        - w[:, None, None] * (Ebar[:, :, None] * Ebar[:, None, :]),
        axis=0,
    )
    return -ll, -grad, -hess


def cox_fit(X, y, w=None, max_iter=60):
    """Cox proportional-hazards fit (Breslow ties and baseline), all rows events.

    ``X`` excludes the intercept. The returned coefficient vector is stored in
    the transformation-model convention (see :class:`CoxFit`).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise EstimationError("duration regression requires nonnegative outcomes")
    n, d = X.shape if X.ndim == 2 else (len(X), 0)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)

    order = np.argsort(y, kind="stable")
    ys, Xs, ws = y[order], X[order], w[order]
    active = ws > 0
    nonidentified = tuple(
        j for j in range(d) if np.ptp(Xs[active, j]) == 0.0
    ) if d else ()
    free = [j for j in range(d) if j not in nonidentified]
    if nonidentified:
        warnings.warn(
            f"constant covariate column(s) {nonidentified} are not identified; "
            "their coefficients are set to 0",
            stacklevel=2,
        )

    gamma_free = np.zeros(len(free))
    if free:
        Xf = Xs[:, free]
        negll, grad, hess = _cox_negloglik_parts(Xf, ys, ws, gamma_free)
        for it in range(max_iter):
            if np.max(np.abs(grad)) <= 1e-9 * (1.0 + abs(negll)):
                break
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            t = 1.0
            slack = 1e-10 * (1.0 + abs(negll))
            while t > 2.0**-30:
                cand = gamma_free - t * step
                negll_c, grad_c, hess_c = _cox_negloglik_parts(Xf, ys, ws, cand)
                if negll_c <= negll + slack:
                    gamma_free, negll, grad, hess = cand, negll_c, grad_c, hess_c
                    break
                t *= 0.5
            else:
                break
        if np.max(np.abs(grad)) > 1e-7 * (1.0 + abs(negll)):
            raise ConvergenceError(
                "Cox partial likelihood did not converge",
                iterations=max_iter,
                grad_norm=float(np.max(np.abs(grad))),
            )

    gamma = np.zeros(d)
    for j, g in zip(free, gamma_free):
        gamma[j] = g

    # Breslow cumulative hazard at distinct event times
    eta = Xs @ gamma if d else np.zeros(n)
    r = ws * np.exp(np.clip(eta, -500, 500))
    S0 = np.cumsum(r[::-1])[::-1]
    first_idx = np.searchsorted(ys, ys, side="left")
    S0 = S0[first_idx]
    times, start = np.unique(ys, return_index=True)
    d_weights = np.add.reduceat(ws, start)
    keep = d_weights > 0  # zero-weight times contribute no hazard mass
    increments = np.where(keep, d_weights / np.where(keep, S0[start], 1.0), 0.0)
    cum_hazard = np.cumsum(increments)
    return CoxFit(
        beta=-gamma,
        event_times=times[keep],
        cum_hazard=cum_hazard[keep],
        nonidentified=nonidentified,
    )


def _censoring_probabilities(X, cens, w):
    if np.all(cens == 0):
        return np.zeros(len(cens))
    if np.all(cens == 1):
        return np.ones(len(cens))
    fit = binary_mle(X, cens.astype(float), w, link="logit")
    return expit(X @ fit.beta)


def cqr_fit(
    X,
    y,
    w=None,
    u=0.5,
    censoring=None,
    right=False,
    nsteps=3,
    firstc=0.1,
    secondc=0.05,
):
    """Three-step censored quantile regression at index u.

    Step 1: a logit of the censoring indicator on all covariates gives
    censoring probabilities; observations usable at u (probability below
    1 - u for right censoring, below u for left censoring) are kept, minus
    those in the highest ``firstc`` quantiles of the usable probabilities.
    Step 2: quantile regression on that sample; rows whose predicted quantile
    falls on the censored side of the observed outcome are removed for
    censored observations, then the lowest ``secondc`` quantiles of the
    signed residuals are dropped. Step 3: quantile regression on the step-2
    sample, repeated with a refreshed sample when ``nsteps`` exceeds 3.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if censoring is None:
        raise ValueError("censored quantile regression requires a censoring indicator")
    cens = np.asarray(censoring).astype(int)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if nsteps < 3:
        raise ValueError("nsteps must be at least 3")
    if not (0.0 <= firstc < 1.0 and 0.0 <= secondc < 1.0):
        raise ValueError("firstc and secondc must lie in [0, 1)")

    pihat = _censoring_probabilities(X, cens, w)
    cut = (1.0 - u) if right else u
    usable = pihat < cut
    if not usable.any():
        raise EstimationError(f"censored quantile regression: empty step-1 selection at u={u:g}")
    keep = usable & (pihat <= np.quantile(pihat[usable], 1.0 - firstc))
    if not keep.any():
        raise EstimationError(f"censored quantile regression: empty step-1 selection at u={u:g}")
    beta = qr_fit(X[keep], y[keep], w[keep], u)

    is_censored = cens.astype(bool)
    for _ in range(nsteps - 2):
        pred = X @ beta
        margin = (y - pred) if right else (pred - y)
        keep = ~is_censored | (margin > 0)
        if not keep.any():
            raise EstimationError(f"censored quantile regression: empty step-2 selection at u={u:g}")
        keep &= margin >= np.quantile(margin[keep], secondc)
        if not keep.any():
            raise EstimationError(f"censored quantile regression: empty step-2 selection at u={u:g}")
        beta = qr_fit(X[keep], y[keep], w[keep], u)
    return beta


def logvar_fit(X2, residuals, w=None):
    """Log-variance regression: WLS of log(residual^2) on the scale design."""
    residuals = np.asarray(residuals, dtype=float)
    r2 = residuals**2
    if np.any(r2 < RESIDUAL_SQ_FLOOR):
        warnings.warn(
            "zero residual in log-variance regression; squared residuals "
            f"floored at {RESIDUAL_SQ_FLOOR:g}",
            stacklevel=2,
        )
        r2 = np.maximum(r2, RESIDUAL_SQ_FLOOR)
    return wls_fit(X2, np.log(r2), w)
