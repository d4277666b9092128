"""Conditional distribution evaluators built from regression fits.

Each supported method produces an immutable fit object exposing

- ``evaluate(y, x)``: the estimated conditional CDF at threshold y for one
  covariate row, and
- ``marginal_probs(cov, w, thresholds)``: the weighted average of
  ``evaluate`` over covariate rows at each threshold (the integrand of the
  plug-in counterfactual CDF), computed by a vectorized fast path.

Monotonicity in y holds for the quantile, location(-scale) and duration
families; the per-threshold regression family (logit/probit/lpm) carries no
such guarantee and is monotonized downstream.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import ObservationTable, UGrid, YGrid, make_ugrid, make_ygrid
from .errors import DegenerateResponseError, EstimationError
from .regress import binary_mle, cox_fit, cqr_fit, logvar_fit, qr_fit, wls_fit

METHODS = ("qr", "loc", "locsca", "cqr", "cox", "logit", "probit", "lpm")

METHOD_LABELS = {
    "qr": "linear quantile regression",
    "loc": "location regression",
    "locsca": "location-scale regression",
    "cqr": "censored linear quantile regression",
    "cox": "duration regression",
    "logit": "logit",
    "probit": "probit",
    "lpm": "linear probability model",
}


class _WeightedECDF:
    """Weighted empirical CDF with vectorized lookup."""

    def __init__(self, values, weights):
        order = np.argsort(values, kind="stable")
        self.values = np.asarray(values, dtype=float)[order]
        cum = np.cumsum(np.asarray(weights, dtype=float)[order])
        self.cum = cum / cum[-1]

    def __call__(self, t):
        idx = np.searchsorted(self.values, t, side="right")
        padded = np.concatenate([[0.0], self.cum])
        return padded[idx]


@dataclass(frozen=True)
class QuantileFamilyDist:
    """qr / cqr: CDF as the trimmed fraction of crossing quantile curves."""

    method: str
    ugrid: UGrid
    coefs: np.ndarray  # (len(ugrid), d_x)
    trimming: float
    ygrid: YGrid = None  # unused for evaluation; quantile family works off the u-grid

    @property
    def design_width(self):
        return self.coefs.shape[1]

    def evaluate(self, y, x):
        eps = self.trimming
        fitted = self.coefs @ np.asarray(x, dtype=float)
        return eps + (1.0 - 2.0 * eps) * np.mean(fitted <= y)

    def marginal_probs(self, cov, w, thresholds, scale_columns=None):
        eps = self.trimming
        fitted = np.asarray(cov, dtype=float) @ self.coefs.T  # (n, K)
        K = fitted.shape[1]
        ecdf = _WeightedECDF(fitted.ravel(), np.repeat(np.asarray(w, dtype=float), K))
        return eps + (1.0 - 2.0 * eps) * ecdf(np.asarray(thresholds, dtype=float))


@dataclass(frozen=True)
class LocationDist:
    """loc: empirical CDF of regression residuals shifted by x'beta."""

    method: str
    beta: np.ndarray
    residual_ecdf: _WeightedECDF
    ygrid: YGrid

    @property
    def design_width(self):
        return len(self.beta)

    def evaluate(self, y, x):
        return float(self.residual_ecdf(y - float(np.dot(x, self.beta))))

    def marginal_probs(self, cov, w, thresholds, scale_columns=None):
        eta = np.asarray(cov, dtype=float) @ self.beta
        args = np.asarray(thresholds, dtype=float)[None, :] - eta[:, None]
        probs = self.residual_ecdf(args)
        w = np.asarray(w, dtype=float)
        return w @ probs / w.sum()


@dataclass(frozen=True)
class LocationScaleDist:
    """locsca: empirical CDF of standardized residuals, location x'beta and
    scale exp(x2'gamma/2)."""

    method: str
    beta: np.ndarray
    gamma: np.ndarray
    scale_columns: np.ndarray
    residual_ecdf: _WeightedECDF
    ygrid: YGrid

    @property
    def design_width(self):
        return len(self.beta)

    def _scales(self, cov, scale_columns=None):
        cols = self.scale_columns if scale_columns is None else scale_columns
        x2 = np.asarray(cov, dtype=float)[..., cols]
        return np.exp(x2 @ self.gamma / 2.0)

    def evaluate(self, y, x, scale_columns=None):
        x = np.asarray(x, dtype=float)
        s = self._scales(x[None, :], scale_columns)[0]
        return float(self.residual_ecdf((y - float(np.dot(x, self.beta))) / s))

    def marginal_probs(self, cov, w, thresholds, scale_columns=None):
        cov = np.asarray(cov, dtype=float)
        eta = cov @ self.beta
        s = self._scales(cov, scale_columns)
        args = (np.asarray(thresholds, dtype=float)[None, :] - eta[:, None]) / s[:, None]
        probs = self.residual_ecdf(args)
        w = np.asarray(w, dtype=float)
        return w @ probs / w.sum()


@dataclass(frozen=True)
class CoxDist:
    """cox: F(y|x) = 1 - exp(-H0(y) exp(-x'beta)) with the Breslow baseline."""

    method: str
    fit: "object"
    ygrid: YGrid

    @property
    def design_width(self):
        return len(self.fit.beta) + 1

    def evaluate(self, y, x):
        h0 = self.fit.baseline_at(y)[0]
        eta = float(np.dot(np.asarray(x, dtype=float)[1:], self.fit.beta))
        return float(1.0 - np.exp(-h0 * np.exp(-eta)))

    def marginal_probs(self, cov, w, thresholds, scale_columns=None):
        h0 = self.fit.baseline_at(np.asarray(thresholds, dtype=float))
        eta = np.asarray(cov, dtype=float)[:, 1:] @ self.fit.beta
        probs = 1.0 - np.exp(-np.exp(-eta)[:, None] * h0[None, :])
        w = np.asarray(w, dtype=float)
        return w @ probs / w.sum()


@dataclass(frozen=True)
class ThresholdRegressionDist:
    """logit / probit / lpm: one binary or linear fit per y-grid threshold.

    ``degenerate`` holds the constant fitted CDF (0 or 1) at thresholds where
    the response was all-0 or all-1; NaN elsewhere. ``separated`` marks
    thresholds where the binary MLE hit the linear-predictor cap. lpm values
    are clipped to [0, 1] at evaluation; ``evaluate_raw`` exposes the
    unclipped value for diagnostics, and the plug-in average is taken over
    raw values (then clipped) so the least-squares intercept identity holds.
    """

    method: str
    ygrid: YGrid
    coefs: np.ndarray  # (len(ygrid), d_x)
    degenerate: np.ndarray
    separated: np.ndarray

    @property
    def design_width(self):
        return self.coefs.shape[1]

    def _grid_index(self, y):
        values = self.ygrid.values
        idx = np.searchsorted(values, y)
        if idx == len(values) or values[idx] != y:
            raise ValueError(
                f"threshold {y!r} is not on the fitted y-grid; the "
                f"{self.method} evaluator does not interpolate"
            )
        return idx

    def _link(self, index_values):
        if self.method == "logit":
            return expit(index_values)
        if self.method == "probit":
            return norm.cdf(index_values)
        return index_values  # lpm: raw linear index

    def evaluate_raw(self, y, x):
        t = self._grid_index(y)
        if not np.isnan(self.degenerate[t]):
            return float(self.degenerate[t])
        return float(self._link(float(np.dot(x, self.coefs[t]))))

    def evaluate(self, y, x):
        raw = self.evaluate_raw(y, x)
        return min(1.0, max(0.0, raw)) if self.method == "lpm" else raw

    def marginal_probs(self, cov, w, thresholds, scale_columns=None):
        thresholds = np.asarray(thresholds, dtype=float)
        t_idx = np.array([self._grid_index(t) for t in thresholds])
        vals = self._link(np.asarray(cov, dtype=float) @ self.coefs[t_idx].T)
        w = np.asarray(w, dtype=float)
        probs = w @ vals / w.sum()
        degen = self.degenerate[t_idx]
        fixed = ~np.isnan(degen)
        probs[fixed] = degen[fixed]
        if self.method == "lpm":
            probs = np.clip(probs, 0.0, 1.0)
        return probs


def _fit_quantile_family(method, table, trimming, nreg, censor_opts):
    ugrid = make_ugrid(trimming, nreg)
    X, y, w = table.covariates, table.outcome, table.weights
    coefs = np.empty((len(ugrid), X.shape[1]))
    for k, u in enumerate(ugrid.values):
        try:
            if method == "qr":
                coefs[k] = qr_fit(X, y, w, u)
            else:
                coefs[k] = cqr_fit(X, y, w, u, censoring=table.censoring, **censor_opts)
        except EstimationError as err:
            raise EstimationError(f"method {method!r} failed at grid point u={u:g}: {err}") from err
    return QuantileFamilyDist(method=method, ugrid=ugrid, coefs=coefs, trimming=trimming)


def _fit_location(table, nreg):
    X, y, w = table.covariates, table.outcome, table.weights
    beta = wls_fit(X, y, w)
    resid = y - X @ beta
    return LocationDist(
        method="loc",
        beta=beta,
        residual_ecdf=_WeightedECDF(resid, w),
        ygrid=make_ygrid(y, nreg),
    )


def _fit_location_scale(table, nreg):
    X, y, w = table.covariates, table.outcome, table.weights
    cols = (
        np.arange(X.shape[1])
        if table.scale_columns is None
        else np.asarray(table.scale_columns, dtype=int)
    )
    beta = wls_fit(X, y, w)
    resid = y - X @ beta
    gamma = logvar_fit(X[:, cols], resid, w)
    standardized = resid / np.exp(X[:, cols] @ gamma / 2.0)
    return LocationScaleDist(
        method="locsca",
        beta=beta,
        gamma=gamma,
        scale_columns=cols,
        residual_ecdf=_WeightedECDF(standardized, w),
        ygrid=make_ygrid(y, nreg),
    )


def _fit_cox(table, nreg):
    y = table.outcome
    if np.any(y < 0):
        raise ValueError("method 'cox' can be used only with nonnegative dependent variables")
    fit = cox_fit(table.covariates[:, 1:], y, table.weights)
    return CoxDist(method="cox", fit=fit, ygrid=make_ygrid(y, nreg))


def _fit_threshold_regression(method, table, nreg):
    X, y, w = table.covariates, table.outcome, table.weights
    ygrid = make_ygrid(y, nreg)
    G, d = len(ygrid), X.shape[1]
    coefs = np.zeros((G, d))
    degenerate = np.full(G, np.nan)
    separated = np.zeros(G, dtype=bool)
    beta0 = None
    for t, yt in enumerate(ygrid.values):
        z = (y <= yt).astype(float)
        try:
            if method == "lpm":
                coefs[t] = wls_fit(X, z, w)
            else:
                fit = binary_mle(X, z, w, link=method, beta0=beta0)
                coefs[t] = fit.beta
                separated[t] = fit.separated
                beta0 = fit.beta
        except DegenerateResponseError as err:
            degenerate[t] = err.value
        except EstimationError as err:
            raise EstimationError(f"method {method!r} failed at grid point y={yt:g}: {err}") from err
    return ThresholdRegressionDist(
        method=method, ygrid=ygrid, coefs=coefs, degenerate=degenerate, separated=separated
    )


def fit_conditional(
    method,
    table: ObservationTable,
    trimming=0.005,
    nreg=100,
    right=False,
    nsteps=3,
    firstc=0.1,
    secondc=0.05,
):
    """Fit the conditional-distribution evaluator for ``method`` on ``table``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "cqr":
        if table.censoring is None:
            raise ValueError("method 'cqr' requires a censoring indicator column")
    elif table.censoring is not None:
        raise ValueError(f"a censoring indicator was given but method {method!r} does not use one")

    if method in ("qr", "cqr"):
        censor_opts = {"right": right, "nsteps": nsteps, "firstc": firstc, "secondc": secondc}
        return _fit_quantile_family(method, table, trimming, nreg, censor_opts)
    if method == "loc":
        return _fit_location(table, nreg)
    if method == "locsca":
        return _fit_location_scale(table, nreg)
    if method == "cox":
        return _fit_cox(table, nreg)
    return _fit_threshold_regression(method, table, nreg)


def evaluate(fit, y, x):
    """Estimated conditional CDF at threshold ``y`` for covariate row ``x``."""
    return fit.evaluate(y, x)


def n_regressions(fit):
    """Number of elementary regressions behind a fit (reporting metadata)."""
    if isinstance(fit, QuantileFamilyDist):
        return len(fit.ugrid)
    if isinstance(fit, ThresholdRegressionDist):
        return len(fit.ygrid)
    return len(fit.ygrid)
