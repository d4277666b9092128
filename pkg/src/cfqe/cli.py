"""Command-line front end: flag parsing, run orchestration, report tables,
and machine-readable curve/test export.

Outputs per run: a formatted report on stdout (suppressed by
--no-print-tables), plus curves.csv, tests.csv and report.txt in the output
directory (flag --output-dir, env var CFQE_OUTPUT_DIR, default
./cfqe_output).
"""

import argparse
import csv
import io
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conddist import METHOD_LABELS, METHODS
from .counterfactual import AnalysisRequest
from .data import load_csv
from .errors import EstimationError
from .inference import run_inference

OUTPUT_DIR_ENV = "CFQE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "cfqe_output"

CURVE_COLUMNS = ("tau", "effect_kind", "estimate", "se", "pw_lo", "pw_hi", "unif_lo", "unif_hi")
TEST_COLUMNS = ("effect_kind", "null_hypothesis", "ks_stat", "cms_stat", "ks_pvalue", "cms_pvalue")


@dataclass
class RunConfig:
    """Validated CLI options, one field per flag."""

    input: str
    outcome: str
    covariates: tuple = ()
    weight: str = None
    group: str = None
    censoring_col: str = None
    counterfactual: tuple = None
    scale: tuple = None
    counterfactual_scale: tuple = None
    method: str = "qr"
    quantiles: tuple = tuple(np.round(np.linspace(0.1, 0.9, 9), 10))
    treatment: bool = False
    decomposition: bool = False
    transformation: bool = False
    trimming: float = 0.005
    nreg: int = 100
    right: bool = False
    nsteps: int = 3
    firstc: float = 0.1
    secondc: float = 0.05
    noboot: bool = False
    weightedboot: bool = False
    seed: int = 8
    robust: bool = False
    reps: int = 100
    alpha: float = 0.05
    first: float = 0.1
    last: float = 0.9
    cons_test: tuple = (0.0,)
    print_tables: bool = True
    workers: int = 1
    output_dir: str = None


def _split_names(value):
    return tuple(s.strip() for s in value.split(",") if s.strip()) if value else ()


def _split_floats(value, flag):
    try:
        return tuple(float(s) for s in value.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects a comma-separated list of numbers")


def build_parser():
    p = argparse.ArgumentParser(
        prog="cfqe",
        description=(
            "Estimate counterfactual distributions and quantile-effect functions "
            "with bootstrap functional inference."
        ),
    )
    p.add_argument("--input", required=True, help="input CSV file (header row required)")
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--weight-col", default=None, help="observation-weight column")
    p.add_argument("--group-col", default=None, help="binary group column (0 = reference)")
    p.add_argument("--censoring-col", default=None, help="censoring indicator column (1 = censored)")
    p.add_argument(
        "--counterfactual-vars",
        default=None,
        help="comma-separated counterfactual covariate columns (same count and order as --covariates)",
    )
    p.add_argument("--scale-vars", default=None, help="scale covariates for method locsca")
    p.add_argument(
        "--counterfactual-scale-vars", default=None, help="counterfactual scale covariates"
    )
    p.add_argument("--method", default="qr", choices=METHODS)
    p.add_argument("--quantiles", default=None, help="comma-separated quantile indexes (default deciles)")
    p.add_argument("--treatment", action="store_true", help="report the structure (treatment) effect")
    p.add_argument("--decomposition", action="store_true", help="report structure, composition and total effects")
    p.add_argument(
        "--transformation",
        action="store_true",
        help="counterfactual covariates are a transformation of the reference covariates",
    )
    p.add_argument("--trimming", type=float, default=0.005)
    p.add_argument("--nreg", type=int, default=100)
    p.add_argument("--right", action="store_true", help="censoring indicator marks right-censored rows")
    p.add_argument("--nsteps", type=int, default=3)
    p.add_argument("--firstc", type=float, default=0.1)
    p.add_argument("--secondc", type=float, default=0.05)
    p.add_argument("--noboot", action="store_true", help="point estimates only, no bootstrap")
    p.add_argument("--weightedboot", action="store_true", help="weighted (exponential) bootstrap")
    p.add_argument("--seed", type=int, default=8)
    p.add_argument("--robust", action="store_true", help="rescaled-IQR bootstrap standard errors")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--first", type=float, default=0.1)
    p.add_argument("--last", type=float, default=0.9)
    p.add_argument("--cons-test", default="0", help="comma-separated constants for QE(tau)=c tests")
    p.add_argument(
        "--no-print-tables",
        dest="print_tables",
        action="store_false",
        help="suppress the formatted report (artifacts are still written)",
    )
    p.add_argument("--workers", type=int, default=1, help="bootstrap worker count")
    p.add_argument("--output-dir", default=None)
    return p


def parse_args(argv):
    parser = build_parser()
    ns = parser.parse_args(argv)

    covariates = _split_names(ns.covariates)
    counterfactual = _split_names(ns.counterfactual_vars) if ns.counterfactual_vars else None
    quantiles = (
        _split_floats(ns.quantiles, "--quantiles")
        if ns.quantiles
        else tuple(np.round(np.linspace(0.1, 0.9, 9), 10))
    )
    cons_test = _split_floats(ns.cons_test, "--cons-test")

    if ns.reps < 1:
        parser.error("--reps must be at least 1")
    if ns.workers < 1:
        parser.error("--workers must be at least 1")
    if not 0.0 < ns.first < ns.last < 1.0:
        parser.error("--first and --last must satisfy 0 < first < last < 1")
    if any(not 0.0 < q < 1.0 for q in quantiles):
        parser.error("--quantiles must lie strictly between 0 and 1")
    if ns.transformation and counterfactual is None:
        parser.error("--transformation requires --counterfactual-vars")
    if (ns.group_col is None) == (counterfactual is None):
        parser.error("specify exactly one of --group-col or --counterfactual-vars")
    if counterfactual is not None and len(counterfactual) != len(covariates):
        parser.error("--counterfactual-vars must list exactly as many columns as --covariates")

    treatment = ns.treatment
    if ns.decomposition and not treatment:
        warnings.warn("decomposition requires treatment; enabling treatment")
        treatment = True
    if (treatment or ns.decomposition) and ns.group_col is None:
        parser.error("--treatment/--decomposition require --group-col")

    return RunConfig(
        input=ns.input,
        outcome=ns.outcome,
        covariates=covariates,
        weight=ns.weight_col,
        group=ns.group_col,
        censoring_col=ns.censoring_col,
        counterfactual=counterfactual,
        scale=_split_names(ns.scale_vars) or None,
        counterfactual_scale=_split_names(ns.counterfactual_scale_vars) or None,
        method=ns.method,
        quantiles=quantiles,
        treatment=treatment,
        decomposition=ns.decomposition,
        transformation=ns.transformation,
        trimming=ns.trimming,
        nreg=ns.nreg,
        right=ns.right,
        nsteps=ns.nsteps,
        firstc=ns.firstc,
        secondc=ns.secondc,
        noboot=ns.noboot,
        weightedboot=ns.weightedboot,
        seed=ns.seed,
        robust=ns.robust,
        reps=ns.reps,
        alpha=ns.alpha,
        first=ns.first,
        last=ns.last,
        cons_test=cons_test,
        print_tables=ns.print_tables,
        workers=ns.workers,
        output_dir=ns.output_dir,
    )


def _fmt(x, width=10):
    return f"{x:>{width}.5g}"


def _effect_title(kind):
    return f"Quantile Effects -- {kind.capitalize()}"


def render_report(report):
    """Format the stdout report; curves.csv carries the same numbers at full precision."""
    out = io.StringIO()
    line = "-" * 78
    meta = report.meta
    out.write(f"Conditional model:                       {METHOD_LABELS[meta['method']]}\n")
    out.write(f"Number of regressions estimated:         {meta['n_regressions']}\n\n")
    if report.noboot:
        out.write("Bootstrap inference suppressed (noboot).\n\n")
    else:
        out.write(
            f"The variance has been estimated by bootstrapping the results "
            f"{report.reps} times ({report.scheme} scheme, seed {report.seed}).\n\n"
        )
    out.write(f"No. of obs. in the reference group:      {meta['n_reference']}\n")
    out.write(f"No. of obs. in the counterfactual group: {meta['n_counterfactual']}\n\n")

    level = int(round((1 - report.alpha) * 100))
    for eff in report.effects:
        out.write(f"\n{_effect_title(eff.curve.effect_kind):^78s}\n")
        out.write(line + "\n")
        out.write(
            f"{'':10s}{'':>10s} {'Pointwise':>10s} "
            f"{f'Pointwise {level}% bounds':>22s} {f'Uniform {level}% bounds':>22s}\n"
        )
        out.write(
            f"{'Quantile':>10s}{'Est.':>10s} {'Std.Err':>10s} "
            f"{'lower':>10s} {'upper':>11s} {'lower':>10s} {'upper':>11s}\n"
        )
        for i, tau in enumerate(report.taus):
            est = _fmt(eff.curve.delta[i])
            if report.noboot:
                se = plo = phi = ulo = uhi = f"{'--':>10s}"
                out.write(f"{tau:>10.3g}{est} {se} {plo} {phi:>11s} {ulo} {uhi:>11s}\n")
            else:
                out.write(
                    f"{tau:>10.3g}{est} {_fmt(eff.sigma[i])} "
                    f"{_fmt(eff.bands.pointwise_low[i])} {_fmt(eff.bands.pointwise_high[i], 11)} "
                    f"{_fmt(eff.bands.uniform_low[i])} {_fmt(eff.bands.uniform_high[i], 11)}\n"
                )
        if not report.noboot and eff.tests:
            out.write(f"\n{'Bootstrap inference on the counterfactual quantile process':^78s}\n")
            out.write(line + "\n")
            out.write(f"{'':53s}{'P-values':>20s}\n")
            out.write(f"{'Null hypothesis':53s}{'KS':>9s}{'CMS':>11s}\n")
            for t in eff.tests:
                out.write(f"{t.label:53s}{t.ks_pvalue:>9.4g}{t.cms_pvalue:>11.4g}\n")
        out.write("\n")
    return out.getvalue()


def write_artifacts(report, output_dir, report_text):
    """Write curves.csv, tests.csv and report.txt; returns the paths."""
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    curves_path = outdir / "curves.csv"
    with curves_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for eff in report.effects:
            for i, tau in enumerate(report.taus):
                if report.noboot:
                    row = [repr(float(tau)), eff.curve.effect_kind, repr(float(eff.curve.delta[i]))] + [""] * 5
                else:
                    row = [
                        repr(float(tau)),
                        eff.curve.effect_kind,
                        repr(float(eff.curve.delta[i])),
                        repr(float(eff.sigma[i])),
                        repr(float(eff.bands.pointwise_low[i])),
                        repr(float(eff.bands.pointwise_high[i])),
                        repr(float(eff.bands.uniform_low[i])),
                        repr(float(eff.bands.uniform_high[i])),
                    ]
                writer.writerow(row)

    tests_path = outdir / "tests.csv"
    with tests_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TEST_COLUMNS)
        for eff in report.effects:
            for t in eff.tests:
                writer.writerow(
                    [
                        eff.curve.effect_kind,
                        t.label,
                        repr(t.ks_stat),
                        repr(t.cms_stat),
                        repr(t.ks_pvalue),
                        repr(t.cms_pvalue),
                    ]
                )

    report_path = outdir / "report.txt"
    report_path.write_text(report_text)
    return curves_path, tests_path, report_path


def run(config: RunConfig):
    """Execute one run; returns the process exit code."""
    try:
        table = load_csv(
            config.input,
            outcome=config.outcome,
            covariates=config.covariates,
            weight=config.weight,
            group=config.group,
            censoring=config.censoring_col,
            counterfactual=config.counterfactual,
            scale=config.scale,
            counterfactual_scale=config.counterfactual_scale,
        )
    except (OSError, ValueError) as err:
        print(f"error in data ingestion: {err}", file=sys.stderr)
        return 1

    try:
        request = AnalysisRequest(
            mode="group" if config.group else "covariate",
            method=config.method,
            quantiles=np.asarray(config.quantiles, dtype=float),
            treatment=config.treatment,
            decomposition=config.decomposition,
            trimming=config.trimming,
            nreg=config.nreg,
            right=config.right,
            nsteps=config.nsteps,
            firstc=config.firstc,
            secondc=config.secondc,
        )
        report = run_inference(
            request,
            table,
            noboot=config.noboot,
            weightedboot=config.weightedboot,
            reps=config.reps,
            seed=config.seed,
            robust=config.robust,
            alpha=config.alpha,
            first=config.first,
            last=config.last,
            cons_test=config.cons_test,
            workers=config.workers,
        )
    except (EstimationError, ValueError, RuntimeError) as err:
        print(f"error in estimation/inference: {err}", file=sys.stderr)
        return 1

    text = render_report(report)
    if config.print_tables:
        sys.stdout.write(text)

    outdir = config.output_dir or os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)
    try:
        write_artifacts(report, outdir, text)
    except OSError as err:
        print(f"error writing artifacts: {err}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    return run(parse_args(argv if argv is not None else sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main())
