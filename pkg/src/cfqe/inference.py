"""Bootstrap resampling, standard errors, confidence bands, functional tests.

Replications re-run the full estimation pipeline on multiplier-reweighted
tables: the empirical scheme multiplies base weights by multinomial counts
drawn over the pooled row set (rows keep their group labels and their paired
counterfactual covariates), the weighted scheme by i.i.d. standard
exponentials. Each replication r derives its RNG from (seed, r, attempt), so
results are bit-identical for any worker count, with failed replications
re-drawn up to three times.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .counterfactual import (
    AnalysisRequest,
    QECurve,
    estimate_processes,
    spec_label_for_effect,
)
from .data import ObservationTable
from .errors import EstimationError

SIGMA_FLOOR = 1e-12
IQR_NORMAL_SPAN = norm.ppf(0.75) - norm.ppf(0.25)  # 1.34897950039...
MAX_ATTEMPTS = 3

SPEC_TEST_LABEL = "Correct specification of the parametric model"
ZERO_TEST_LABEL = "No effect: QE(tau)=0 for all taus"
MEDIAN_TEST_LABEL = "Constant effect: QE(tau)=QE(0.5) for all taus"
DOMINANCE_POS_LABEL = "Stochastic dominance: QE(tau)>0 for all taus"
DOMINANCE_NEG_LABEL = "Stochastic dominance: QE(tau)<0 for all taus"


def _multinomial_multipliers(rng, n):
    return rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)


def _exponential_multipliers(rng, n):
    return rng.standard_exponential(n)


_SCHEMES = {"empirical": _multinomial_multipliers, "weighted": _exponential_multipliers}


@dataclass
class BootstrapDraws:
    """Per-process draw matrices (reps x len(taus)) plus scheme metadata."""

    draws: dict
    scheme: str
    seed: int
    reps: int
    taus: np.ndarray
    redraws: int = 0


def replication_rng(seed, replication, attempt=0):
    """Deterministic child RNG for one bootstrap replication."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(replication, attempt))
    )


def _one_replication(request, table, scheme, seed, r):
    multipliers = _SCHEMES[scheme]
    last_err = None
    for attempt in range(MAX_ATTEMPTS):
        rng = replication_rng(seed, r, attempt)
        mult = multipliers(rng, table.n)
        try:
            est = estimate_processes(request, table.with_weights(table.weights * mult))
            return est.processes, attempt
        except (EstimationError, ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
            last_err = err
    raise RuntimeError(
        f"bootstrap replication {r} failed after {MAX_ATTEMPTS} attempts: {last_err}"
    )


def bootstrap(
    request: AnalysisRequest,
    table: ObservationTable,
    scheme="empirical",
    reps=100,
    seed=8,
    workers=1,
):
    """Bootstrap draws of every estimated process (effects and spec tests)."""
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown bootstrap scheme {scheme!r}")
    if reps < 1:
        raise ValueError("reps must be at least 1")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    lambda r: _one_replication(request, table, scheme, seed, r),
                    range(reps),
                )
            )
    else:
        results = [_one_replication(request, table, scheme, seed, r) for r in range(reps)]

    names = list(results[0][0])
    taus = request.quantiles
    draws = {name: np.empty((reps, len(taus))) for name in names}
    redraws = 0
    for r, (processes, attempt) in enumerate(results):
        redraws += attempt
        for name in names:
            draws[name][r] = processes[name]
    return BootstrapDraws(
        draws=draws, scheme=scheme, seed=seed, reps=reps, taus=taus, redraws=redraws
    )


def standard_errors(draws, robust=False):
    """Per-tau bootstrap standard errors.

    robust=False: sample standard deviation across replications.
    robust=True: interquartile range rescaled by the normal IQR, with the
    quantiles taken by linear interpolation of the order statistics.
    Zero dispersion is floored at 1e-12; the returned mask flags floored
    entries (protects the division inside t-statistics).
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2:
        raise ValueError("standard errors require at least two replications")
    if robust:
        sigma = (
            np.quantile(draws, 0.75, axis=0) - np.quantile(draws, 0.25, axis=0)
        ) / IQR_NORMAL_SPAN
    else:
        sigma = np.std(draws, axis=0, ddof=1)
    floored = sigma < SIGMA_FLOOR
    return np.maximum(sigma, SIGMA_FLOOR), floored


def _range_mask(taus, first, last):
    mask = (taus >= first - 1e-12) & (taus <= last + 1e-12)
    if not mask.any():
        raise EstimationError(
            f"no quantile indexes inside the inference range [{first}, {last}]"
        )
    return mask


@dataclass
class Bands:
    pointwise_low: np.ndarray
    pointwise_high: np.ndarray
    uniform_low: np.ndarray
    uniform_high: np.ndarray
    z_critical: float
    t_critical: float


def uniform_band(delta, sigma, draws, alpha, taus, first, last):
    """Pointwise (normal) and uniform (bootstrap max-t) confidence bands.

    The uniform critical value is the empirical (1 - alpha) quantile across
    replications of the maximal studentized deviation over the inference
    range; both bands are reported at every requested tau.
    """
    delta = np.asarray(delta, dtype=float)
    mask = _range_mask(taus, first, last)
    ratios = np.abs(draws - delta[None, :]) / sigma[None, :]
    max_stats = ratios[:, mask].max(axis=1)
    t_crit = float(np.quantile(max_stats, 1.0 - alpha))
    z_crit = float(norm.ppf(1.0 - alpha / 2.0))
    return Bands(
        pointwise_low=delta - z_crit * sigma,
        pointwise_high=delta + z_crit * sigma,
        uniform_low=delta - t_crit * sigma,
        uniform_high=delta + t_crit * sigma,
        z_critical=z_crit,
        t_critical=t_crit,
    )


@dataclass
class TestResult:
    label: str
    ks_stat: float
    cms_stat: float
    ks_pvalue: float
    cms_pvalue: float


def _one_sided_part(values, side):
    if side == "neg_violation":  # violations of D >= 0
        return np.maximum(-values, 0.0)
    if side == "pos_violation":  # violations of D <= 0
        return np.maximum(values, 0.0)
    return np.abs(values)


def _ks_cms(process, sigma, mask, side):
    t = _one_sided_part(process, side) / sigma
    t = t[..., mask]
    return t.max(axis=-1), (t**2).mean(axis=-1)


def _bootstrap_test(label, D, D_draws, sigma, mask, side="two_sided"):
    """KS/CMS statistics with recentered-bootstrap p-values.

    p-value: share of replications whose statistic of (D*_r - D) reaches the
    observed statistic (weak inequality, so degenerate zero statistics yield
    p = 1).
    """
    ks_obs, cms_obs = _ks_cms(D, sigma, mask, side)
    ks_boot, cms_boot = _ks_cms(D_draws - D[None, :], sigma, mask, side)
    return TestResult(
        label=label,
        ks_stat=float(ks_obs),
        cms_stat=float(cms_obs),
        ks_pvalue=float(np.mean(ks_boot >= ks_obs)),
        cms_pvalue=float(np.mean(cms_boot >= cms_obs)),
    )


def functional_tests(
    delta,
    effect_draws,
    sigma,
    taus,
    first,
    last,
    cons_test=(0.0,),
    robust=False,
    spec_process=None,
    spec_draws=None,
):
    """Test table for one effect: specification (when a process is attached),
    zero / constant-level nulls, constant-at-median, and both stochastic
    dominance directions."""
    delta = np.asarray(delta, dtype=float)
    mask = _range_mask(taus, first, last)
    rows = []

    if spec_process is not None:
        spec_sigma, _ = standard_errors(spec_draws, robust)
        rows.append(
            _bootstrap_test(SPEC_TEST_LABEL, spec_process, spec_draws, spec_sigma, mask)
        )

    constants = [0.0] + [float(c) for c in cons_test if float(c) != 0.0]
    for c in constants:
        label = ZERO_TEST_LABEL if c == 0.0 else f"Constant effect: QE(tau)={c:g} for all taus"
        rows.append(_bootstrap_test(label, delta - c, effect_draws - c, sigma, mask))

    median_idx = int(np.argmin(np.abs(taus - 0.5)))
    centered = delta - delta[median_idx]
    centered_draws = effect_draws - effect_draws[:, median_idx][:, None]
    centered_sigma, _ = standard_errors(centered_draws, robust)
    rows.append(
        _bootstrap_test(MEDIAN_TEST_LABEL, centered, centered_draws, centered_sigma, mask)
    )

    rows.append(
        _bootstrap_test(
            DOMINANCE_POS_LABEL, delta, effect_draws, sigma, mask, side="neg_violation"
        )
    )
    rows.append(
        _bootstrap_test(
            DOMINANCE_NEG_LABEL, delta, effect_draws, sigma, mask, side="pos_violation"
        )
    )
    return rows


@dataclass
class EffectInference:
    """Inference bundle for one effect kind (bands absent under noboot)."""

    curve: QECurve
    sigma: np.ndarray = None
    sigma_floored: np.ndarray = None
    bands: Bands = None
    tests: list = field(default_factory=list)
    saturated: np.ndarray = None


@dataclass
class InferenceReport:
    effects: list
    taus: np.ndarray
    first: float
    last: float
    alpha: float
    reps: int
    scheme: str
    seed: int
    robust: bool
    noboot: bool
    meta: dict


def run_inference(
    request: AnalysisRequest,
    table: ObservationTable,
    noboot=False,
    weightedboot=False,
    reps=100,
    seed=8,
    robust=False,
    alpha=0.05,
    first=0.1,
    last=0.9,
    cons_test=(0.0,),
    workers=1,
):
    """Point estimates plus bootstrap standard errors, bands and test tables."""
    if not 0.0 < first < last < 1.0:
        raise ValueError("inference range must satisfy 0 < first < last < 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")

    point = estimate_processes(request, table)
    taus = point.taus
    curves = {
        kind: QECurve(taus=taus, delta=point.processes[kind], effect_kind=kind)
        for kind in point.effect_kinds
    }

    meta = dict(point.meta)
    meta["method"] = request.method

    if noboot:
        effects = [
            EffectInference(curve=curves[kind], saturated=point.saturated.get(kind))
            for kind in point.effect_kinds
        ]
        return InferenceReport(
            effects=effects,
            taus=taus,
            first=first,
            last=last,
            alpha=alpha,
            reps=0,
            scheme="none",
            seed=seed,
            robust=robust,
            noboot=True,
            meta=meta,
        )

    scheme = "weighted" if weightedboot else "empirical"
    boot = bootstrap(request, table, scheme=scheme, reps=reps, seed=seed, workers=workers)
    meta["redraws"] = boot.redraws

    effects = []
    for kind in point.effect_kinds:
        delta = point.processes[kind]
        effect_draws = boot.draws[kind]
        sigma, floored = standard_errors(effect_draws, robust)
        bands = uniform_band(delta, sigma, effect_draws, alpha, taus, first, last)
        spec_label = spec_label_for_effect(kind, point.processes)
        spec_process = spec_draws = None
        if spec_label is not None:
            spec_process = point.processes[f"spec:{spec_label}"]
            spec_draws = boot.draws[f"spec:{spec_label}"]
        tests = functional_tests(
            delta,
            effect_draws,
            sigma,
            taus,
            first,
            last,
            cons_test=cons_test,
            robust=robust,
            spec_process=spec_process,
            spec_draws=spec_draws,
        )
        effects.append(
            EffectInference(
                curve=curves[kind],
                sigma=sigma,
                sigma_floored=floored,
                bands=bands,
                tests=tests,
                saturated=point.saturated.get(kind),
            )
        )
    return InferenceReport(
        effects=effects,
        taus=taus,
        first=first,
        last=last,
        alpha=alpha,
        reps=reps,
        scheme=scheme,
        seed=seed,
        robust=robust,
        noboot=False,
        meta=meta,
    )
