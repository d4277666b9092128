"""Tabular ingestion, the model frame, and evaluation grids.

The model frame is an :class:`ObservationTable`: outcome, covariate matrix
with a leading intercept column, per-observation weights, and the optional
group / censoring / counterfactual-covariate columns. Evaluation grids are
an outcome-value grid (``make_ygrid``) and a quantile-index grid
(``make_ugrid``).
"""

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

INTERCEPT_NAME = "const"


def _as_1d_float(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return a


@dataclass
class ObservationTable:
    """Model frame after ingestion. Pure value type, safe to share read-only.

    ``covariates`` (and ``counterfactual_covariates`` when present) carry the
    intercept as their first column, so both have ``d_x`` columns.
    """

    outcome: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray = None
    covariate_names: tuple = ()
    group: np.ndarray = None
    censoring: np.ndarray = None
    counterfactual_covariates: np.ndarray = None
    scale_columns: np.ndarray = None
    counterfactual_scale_columns: np.ndarray = None

    def __post_init__(self):
        self.outcome = _as_1d_float(self.outcome, "outcome")
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim != 2:
            raise ValueError("covariates must be a 2-d matrix")
        n, d = self.covariates.shape
        if len(self.outcome) != n:
            raise ValueError("outcome and covariates disagree on row count")
        if n == 0:
            raise ValueError("empty table")
        if not np.allclose(self.covariates[:, 0], 1.0):
            raise ValueError("first covariate column must be the constant 1")
        if self.weights is None:
            self.weights = np.ones(n)
        self.weights = _as_1d_float(self.weights, "weights")
        if len(self.weights) != n:
            raise ValueError("weights length mismatch")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if not self.weights.sum() > 0:
            raise ValueError("weights must sum to a strictly positive value")
        for arr_name in ("outcome", "covariates", "weights"):
            if not np.isfinite(getattr(self, arr_name)).all():
                raise ValueError(f"{arr_name} contains non-finite values")
        if not self.covariate_names:
            self.covariate_names = (INTERCEPT_NAME,) + tuple(
                f"x{j}" for j in range(1, d)
            )
        self.covariate_names = tuple(self.covariate_names)
        if len(self.covariate_names) != d:
            raise ValueError("covariate_names length mismatch")

        if self.group is not None:
            self.group = np.asarray(self.group)
            g = set(np.unique(self.group).tolist())
            if not g <= {0, 1}:
                raise ValueError("group column must contain only 0 and 1")
            if len(g) != 2:
                raise ValueError("both groups must be non-empty")
            self.group = self.group.astype(int)
        if self.censoring is not None:
            self.censoring = np.asarray(self.censoring)
            if not set(np.unique(self.censoring).tolist()) <= {0, 1}:
                raise ValueError("censoring column must contain only 0 and 1")
            self.censoring = self.censoring.astype(int)
        if self.counterfactual_covariates is not None:
            self.counterfactual_covariates = np.asarray(
                self.counterfactual_covariates, dtype=float
            )
            if self.counterfactual_covariates.shape != (n, d):
                raise ValueError(
                    "counterfactual covariates must contain exactly the same "
                    f"number of variables as the covariates (expected {d} columns)"
                )
            if not np.isfinite(self.counterfactual_covariates).all():
                raise ValueError("counterfactual covariates contain non-finite values")
        if self.scale_columns is not None:
            self.scale_columns = np.asarray(self.scale_columns, dtype=int)
        if self.counterfactual_scale_columns is not None:
            self.counterfactual_scale_columns = np.asarray(
                self.counterfactual_scale_columns, dtype=int
            )

    @property
    def n(self):
        return len(self.outcome)

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    def with_weights(self, weights):
        """Copy of the table with replaced weights (bootstrap multipliers)."""
        return replace(self, weights=np.asarray(weights, dtype=float))

    def subset(self, mask):
        """Row subset; group labels are dropped (subsets are single populations)."""
        mask = np.asarray(mask, dtype=bool)
        return ObservationTable(
            outcome=self.outcome[mask],
            covariates=self.covariates[mask],
            weights=self.weights[mask],
            covariate_names=self.covariate_names,
            group=None,
            censoring=None if self.censoring is None else self.censoring[mask],
            counterfactual_covariates=(
                None
                if self.counterfactual_covariates is None
                else self.counterfactual_covariates[mask]
            ),
            scale_columns=self.scale_columns,
            counterfactual_scale_columns=self.counterfactual_scale_columns,
        )


@dataclass(frozen=True)
class YGrid:
    """Strictly increasing outcome thresholds, a subset of observed values."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 1 or len(self.values) == 0:
            raise ValueError("y-grid must be a non-empty vector")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("y-grid must be strictly increasing")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class UGrid:
    """Equally spaced quantile indexes from trimming to 1 - trimming."""

    values: np.ndarray
    trimming: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("u-grid must be strictly increasing")

    def __len__(self):
        return len(self.values)


def make_ygrid(outcome, nreg):
    """Select ``nreg`` thresholds at evenly spaced order-statistic positions
    among the sorted distinct observed outcomes. All distinct values are used
    when ``nreg`` is at least their count."""
    outcome = _as_1d_float(outcome, "outcome")
    if len(outcome) == 0:
        raise ValueError("outcome is empty")
    if nreg < 1:
        raise ValueError("nreg must be a positive integer")
    distinct = np.unique(outcome)
    m = len(distinct)
    if nreg >= m:
        return YGrid(distinct)
    positions = np.round(np.linspace(0.0, m - 1.0, int(nreg))).astype(int)
    return YGrid(distinct[positions])


def make_ugrid(trimming=0.005, nreg=100):
    """Equally spaced grid of ``nreg`` quantile indexes on [eps, 1 - eps]."""
    if not 0.0 < trimming < 0.5:
        raise ValueError("trimming must lie strictly between 0 and 0.5")
    if nreg < 2:
        raise ValueError("nreg must be at least 2")
    return UGrid(np.linspace(trimming, 1.0 - trimming, int(nreg)), trimming)


def _numeric_column(frame, name):
    if name not in frame.columns:
        raise ValueError(f"unknown column name: {name!r}")
    col = frame[name]
    if col.dtype == object:
        stripped = col.astype(str).str.strip()
        col = stripped.mask(stripped == "", other=np.nan)
        try:
            col = pd.to_numeric(col, errors="raise")
        except (ValueError, TypeError) as err:
            raise ValueError(f"non-numeric cell in column {name!r}: {err}") from err
    return pd.to_numeric(col)


def load_csv(
    path,
    outcome,
    covariates=(),
    weight=None,
    group=None,
    censoring=None,
    counterfactual=None,
    scale=None,
    counterfactual_scale=None,
):
    """Read a header-row CSV into an :class:`ObservationTable`.

    ``covariates`` / ``counterfactual`` / ``scale`` / ``counterfactual_scale``
    are sequences of column names; the other roles are single column names.
    Rows with a missing value in any used column are dropped. An intercept is
    prepended to the covariates (and to the counterfactual covariates), and
    user-supplied constant columns are rejected.
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"input file not found: {path}") from None
    covariates = list(covariates or ())
    counterfactual = list(counterfactual) if counterfactual else None
    if counterfactual is not None and len(counterfactual) != len(covariates):
        raise ValueError(
            "counterfactual columns must contain exactly the same number of "
            f"variables as the covariates ({len(covariates)})"
        )

    used = {}
    used[outcome] = _numeric_column(frame, outcome)
    for name in covariates:
        used.setdefault(name, _numeric_column(frame, name))
    for name in counterfactual or ():
        used.setdefault(name, _numeric_column(frame, name))
    for name in (weight, group, censoring):
        if name is not None:
            used.setdefault(name, _numeric_column(frame, name))
    data = pd.DataFrame(used).dropna()
    if data.empty:
        raise ValueError("empty table after dropping rows with missing values")

    n = len(data)
    X = np.column_stack([np.ones(n)] + [data[c].to_numpy() for c in covariates])
    for j, name in enumerate(covariates, start=1):
        if n > 1 and np.ptp(X[:, j]) == 0.0:
            raise ValueError(
                f"covariate {name!r} is constant; the intercept is added "
                "internally and constant columns would make the design singular"
            )
    Xc = None
    if counterfactual is not None:
        Xc = np.column_stack(
            [np.ones(n)] + [data[c].to_numpy() for c in counterfactual]
        )

    def col_indices(names, pool, pool_label):
        if names is None:
            return None
        idx = [0]
        for name in names:
            if name not in pool:
                raise ValueError(f"unknown {pool_label} column: {name!r}")
            idx.append(pool.index(name) + 1)
        return np.unique(idx)

    scale_idx = col_indices(list(scale) if scale else None, covariates, "scale")
    cf_scale_idx = col_indices(
        list(counterfactual_scale) if counterfactual_scale else None,
        counterfactual or [],
        "counterfactual scale",
    )
    if cf_scale_idx is None and scale_idx is not None:
        cf_scale_idx = scale_idx.copy()

    return ObservationTable(
        outcome=data[outcome].to_numpy(),
        covariates=X,
        weights=None if weight is None else data[weight].to_numpy(),
        covariate_names=(INTERCEPT_NAME,) + tuple(covariates),
        group=None if group is None else data[group].to_numpy(),
        censoring=None if censoring is None else data[censoring].to_numpy(),
        counterfactual_covariates=Xc,
        scale_columns=scale_idx,
        counterfactual_scale_columns=cf_scale_idx,
    )


def weighted_ecdf(values, weights, thresholds):
    """Weighted empirical CDF evaluated at each threshold (1-d array result)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    cum = np.cumsum(weights[order])
    total = cum[-1]
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    idx = np.searchsorted(sorted_vals, thresholds, side="right")
    out = np.zeros(len(thresholds), dtype=float)
    nonzero = idx > 0
    out[nonzero] = cum[idx[nonzero] - 1] / total
    return out
