"""Plug-in counterfactual CDFs, left-inverse quantiles, and QE functions.

A counterfactual CDF combines one population's conditional-distribution fit
with another population's empirical covariate distribution. Quantile-effect
(QE) curves are differences of two counterfactual quantile functions:

- composition: reference model, counterfactual vs reference covariates;
- structure: counterfactual vs reference model, counterfactual covariates;
- total: structure + composition (telescoping identity, exact).

``estimate_processes`` additionally produces the specification-test
discrepancy processes (empirical minus model-implied quantiles) consumed by
the inference module, so that one function defines everything the bootstrap
re-estimates per replication.
"""

from dataclasses import dataclass, field

import numpy as np

from .conddist import fit_conditional, n_regressions
from .data import ObservationTable, YGrid, make_ygrid, weighted_ecdf

EFFECT_ORDER = ("structure", "composition", "total")

SPEC_FOR_EFFECT = {
    "composition": ("reference", "group0"),
    "structure": ("group1",),
    "total": ("pooled",),
}


@dataclass(frozen=True)
class CounterfactualCDF:
    """Monotone step function: ascending thresholds, nondecreasing probs."""

    thresholds: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if len(t) == 0:
            raise ValueError("empty grid")
        if t.shape != p.shape:
            raise ValueError("thresholds and probs disagree in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be ascending")
        if np.any(np.diff(p) < 0) or p[0] < 0 or p[-1] > 1:
            raise ValueError("probs must be nondecreasing within [0, 1]")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "probs", p)

    def step_value(self, y):
        """Cadlag step extension: value at the largest threshold <= y (0 before)."""
        idx = np.searchsorted(self.thresholds, np.atleast_1d(y), side="right")
        padded = np.concatenate([[0.0], self.probs])
        return padded[idx]


@dataclass(frozen=True)
class QECurve:
    """Quantile-effect function on the requested quantile indexes."""

    taus: np.ndarray
    delta: np.ndarray
    effect_kind: str

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if np.any(np.diff(taus) <= 0) or taus[0] <= 0 or taus[-1] >= 1:
            raise ValueError("taus must be strictly increasing within (0, 1)")
        if not np.isfinite(delta).all():
            raise ValueError("delta contains non-finite values")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class AnalysisRequest:
    """Estimation request: populations, method, and estimator options."""

    mode: str  # "group" or "covariate" (counterfactual covariates / transformation)
    method: str = "qr"
    quantiles: np.ndarray = field(
        default_factory=lambda: np.linspace(0.1, 0.9, 9)
    )
    treatment: bool = False
    decomposition: bool = False
    trimming: float = 0.005
    nreg: int = 100
    right: bool = False
    nsteps: int = 3
    firstc: float = 0.1
    secondc: float = 0.05

    def __post_init__(self):
        if self.mode not in ("group", "covariate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        q = np.asarray(self.quantiles, dtype=float)
        if q.ndim != 1 or len(q) == 0 or np.any((q <= 0) | (q >= 1)):
            raise ValueError("quantiles must lie strictly between 0 and 1")
        if np.any(np.diff(q) <= 0):
            raise ValueError("quantiles must be strictly increasing")
        object.__setattr__(self, "quantiles", q)
        if self.decomposition and not self.treatment:
            raise ValueError("decomposition requires treatment")
        if self.mode == "covariate" and self.treatment:
            raise ValueError("treatment effects require group mode")

    @property
    def effect_kinds(self):
        if self.decomposition:
            return EFFECT_ORDER
        if self.treatment:
            return ("structure",)
        return ("composition",)


def plug_in_cdf(fit, cov, w, grid: YGrid, scale_columns=None):
    """Plug-in counterfactual CDF: weighted average of the conditional CDF
    over covariate rows, monotonized by running maximum and clipped."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[1] != fit.design_width:
        raise ValueError(
            f"covariate matrix has {cov.shape[-1]} columns; the fit expects {fit.design_width}"
        )
    probs = fit.marginal_probs(cov, w, grid.values, scale_columns=scale_columns)
    probs = np.clip(np.maximum.accumulate(probs), 0.0, 1.0)
    return CounterfactualCDF(thresholds=np.asarray(grid.values, float).copy(), probs=probs)


def left_inverse(cdf: CounterfactualCDF, tau):
    """Smallest grid threshold with probs >= tau.

    Returns ``(value, saturated)``; when no grid point reaches tau the largest
    threshold is returned with the saturation flag set.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly between 0 and 1")
    idx = np.searchsorted(cdf.probs, tau, side="left")
    if idx == len(cdf.probs):
        return float(cdf.thresholds[-1]), True
    return float(cdf.thresholds[idx]), False


def quantile_path(cdf: CounterfactualCDF, taus):
    """Vectorized left-inverse over a tau grid; returns (values, saturated)."""
    taus = np.asarray(taus, dtype=float)
    idx = np.searchsorted(cdf.probs, taus, side="left")
    saturated = idx == len(cdf.probs)
    idx = np.minimum(idx, len(cdf.probs) - 1)
    return cdf.thresholds[idx], saturated


def _reference_grid(request, fit, outcome):
    # For the quantile family the paper's nreg counts quantile regressions,
    # not y values; use every distinct observed outcome as threshold.
    if request.method in ("qr", "cqr"):
        return make_ygrid(outcome, len(np.unique(outcome)))
    return fit.ygrid


def _empirical_cdf(outcome, weights, grid: YGrid):
    return CounterfactualCDF(
        thresholds=np.asarray(grid.values, float).copy(),
        probs=weighted_ecdf(outcome, weights, grid.values),
    )


# Numerical slack for the specification-test inversion: the model-implied and
# empirical CDFs agree only up to solver tolerance (the binary-MLE gradient
# contract allows ~1e-8 in the fitted probabilities), so both left-inverses
# are taken at tau minus this slack. Exactly-attainable tau values (tau = k/n)
# would otherwise flip a grid step on float noise.
SPEC_TEST_PROB_TOL = 1e-7


def _spec_process(emp_cdf, model_cdf, taus):
    adjusted = np.asarray(taus, dtype=float) - SPEC_TEST_PROB_TOL
    q_emp, _ = quantile_path(emp_cdf, adjusted)
    q_model, _ = quantile_path(model_cdf, adjusted)
    return q_emp - q_model


@dataclass
class EffectsEstimate:
    """One full pass of the estimation pipeline (point or bootstrap)."""

    taus: np.ndarray
    processes: dict  # name -> tau-indexed vector (effects and spec tests)
    effect_kinds: tuple
    saturated: dict  # effect kind -> bool mask
    meta: dict


def _fit_opts(request):
    return dict(
        trimming=request.trimming,
        nreg=request.nreg,
        right=request.right,
        nsteps=request.nsteps,
        firstc=request.firstc,
        secondc=request.secondc,
    )


def _covariate_mode(request, table):
    if table.counterfactual_covariates is None:
        raise ValueError("covariate mode requires counterfactual covariates")
    taus = request.quantiles
    fit = fit_conditional(request.method, table, **_fit_opts(request))
    grid = _reference_grid(request, fit, table.outcome)
    cdf_ref = plug_in_cdf(fit, table.covariates, table.weights, grid)
    cdf_cf = plug_in_cdf(
        fit,
        table.counterfactual_covariates,
        table.weights,
        grid,
        scale_columns=table.counterfactual_scale_columns,
    )
    q_ref, sat_ref = quantile_path(cdf_ref, taus)
    q_cf, sat_cf = quantile_path(cdf_cf, taus)
    emp = _empirical_cdf(table.outcome, table.weights, grid)
    processes = {
        "composition": q_cf - q_ref,
        "spec:reference": _spec_process(emp, cdf_ref, taus),
    }
    meta = {
        "n_reference": table.n,
        "n_counterfactual": table.n,
        "n_regressions": n_regressions(fit),
    }
    return EffectsEstimate(
        taus=taus,
        processes=processes,
        effect_kinds=request.effect_kinds,
        saturated={"composition": sat_ref | sat_cf},
        meta=meta,
    )


def _group_mode(request, table):
    if table.group is None:
        raise ValueError("group mode requires a group column")
    taus = request.quantiles
    t0 = table.subset(table.group == 0)
    t1 = table.subset(table.group == 1)

    fit0 = fit_conditional(request.method, t0, **_fit_opts(request))
    grid0 = _reference_grid(request, fit0, t0.outcome)
    cdf00 = plug_in_cdf(fit0, t0.covariates, t0.weights, grid0)
    cdf01 = plug_in_cdf(fit0, t1.covariates, t1.weights, grid0)
    q00, sat00 = quantile_path(cdf00, taus)
    q01, sat01 = quantile_path(cdf01, taus)

    processes = {}
    saturated = {}
    composition = q01 - q00
    if not request.treatment or request.decomposition:
        processes["composition"] = composition
        saturated["composition"] = sat00 | sat01

    if request.treatment:
        fit1 = fit_conditional(request.method, t1, **_fit_opts(request))
        grid1 = _reference_grid(request, fit1, t1.outcome)
        cdf11 = plug_in_cdf(fit1, t1.covariates, t1.weights, grid1)
        q11, sat11 = quantile_path(cdf11, taus)
        structure = q11 - q01
        processes["structure"] = structure
        saturated["structure"] = sat11 | sat01
        if request.decomposition:
            # total = structure + composition exactly (telescoping identity)
            processes["total"] = structure + composition
            saturated["total"] = saturated["structure"] | saturated["composition"]

    if not request.treatment:
        emp0 = _empirical_cdf(t0.outcome, t0.weights, grid0)
        processes["spec:group0"] = _spec_process(emp0, cdf00, taus)
    else:
        emp1 = _empirical_cdf(t1.outcome, t1.weights, grid1)
        processes["spec:group1"] = _spec_process(emp1, cdf11, taus)
        if request.decomposition:
            emp0 = _empirical_cdf(t0.outcome, t0.weights, grid0)
            processes["spec:group0"] = _spec_process(emp0, cdf00, taus)
            # combined population: mixture of the group fits at group weight shares
            union = np.unique(np.concatenate([grid0.values, grid1.values]))
            w0, w1 = t0.weights.sum(), t1.weights.sum()
            mix = (w0 * cdf00.step_value(union) + w1 * cdf11.step_value(union)) / (w0 + w1)
            model_pooled = CounterfactualCDF(union, np.clip(np.maximum.accumulate(mix), 0, 1))
            emp_pooled = CounterfactualCDF(
                union,
                weighted_ecdf(
                    np.concatenate([t0.outcome, t1.outcome]),
                    np.concatenate([t0.weights, t1.weights]),
                    union,
                ),
            )
            processes["spec:pooled"] = _spec_process(emp_pooled, model_pooled, taus)

    meta = {
        "n_reference": t0.n,
        "n_counterfactual": t1.n,
        "n_regressions": n_regressions(fit0),
    }
    return EffectsEstimate(
        taus=taus,
        processes=processes,
        effect_kinds=request.effect_kinds,
        saturated=saturated,
        meta=meta,
    )


def estimate_processes(request: AnalysisRequest, table: ObservationTable):
    """Run the full plug-in pipeline once; the bootstrap re-runs this."""
    if request.mode == "covariate":
        return _covariate_mode(request, table)
    return _group_mode(request, table)


def spec_label_for_effect(effect_kind, processes):
    """Specification-test process attached to an effect's report table."""
    for label in SPEC_FOR_EFFECT[effect_kind]:
        if f"spec:{label}" in processes:
            return label
    return None


def compute_effects(request: AnalysisRequest, table: ObservationTable):
    """Point-estimate QE curves, ordered for display."""
    est = estimate_processes(request, table)
    return [
        QECurve(taus=est.taus, delta=est.processes[kind], effect_kind=kind)
        for kind in est.effect_kinds
    ]
