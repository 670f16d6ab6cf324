"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    atomic_write_text,
    csv_text,
    grid_header,
    json_text,
    load_dataset,
    read_covariates,
)
from .errors import DataError, InvalidArgument, NumericalError, WatlError
from .simulation import ESTIMATORS, ExperimentReport, SimConfig, default_workers, run_experiment
from .transfer import COARSE_LAMBDA_GRID, TransferConfig, predict_many

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _auto_or(kind):
    def parse(text):
        if text == "auto":
            return "auto"
        try:
            return kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="watl", description="Wasserstein transfer learning for distributional regression")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run the simulation study and write RMSPR tables")
    sim.add_argument("--k", type=int, default=5, help="number of sources")
    sim.add_argument("--n0", type=_int_list, default=[200], help="target size(s), comma separated")
    sim.add_argument("--tau", type=_int_list, default=[100], help="source size unit(s); n_k = k * tau")
    sim.add_argument("--psi", type=_float_list, default=None,
                     help="per-source similarity parameters (default 0.1k)")
    sim.add_argument("--source-sizes", type=_int_list, default=None,
                     help="explicit source sizes, overriding k * tau")
    sim.add_argument("--reps", type=int, default=50)
    sim.add_argument("--n-eval", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--grid-size", type=int, default=100)
    sim.add_argument("--estimators", default="watl,only_target,only_source",
                     help=f"comma list drawn from {','.join(ESTIMATORS)}")
    sim.add_argument("--lambda", dest="lam", type=_auto_or(float), default="auto")
    sim.add_argument("--lambda-grid", default="scaled",
                     help="lambda candidates for CV: 'scaled' (data-scaled), 'coarse' (0 to 3 by 0.1) "
                          "or a comma list")
    sim.add_argument("--l", dest="L", type=_auto_or(int), default=2)
    sim.add_argument("--selection", choices=("per_query", "shared"), default="per_query")
    sim.add_argument("--folds", type=int, default=5)
    sim.add_argument("--workers", type=int, default=None,
                     help="parallel replications (default: $WATL_THREADS or 1)")
    sim.add_argument("--timing", action="store_true", help="include wall-clock runtime in the JSON report")
    sim.add_argument("--out", type=Path, required=True, help="output directory")

    fit = sub.add_parser("fit-predict", help="fit on a manifest dataset and predict at query covariates")
    fit.add_argument("--manifest", type=Path, required=True)
    fit.add_argument("--query", type=Path, required=True, help="CSV of query covariates (header row)")
    fit.add_argument("--mode", choices=("global", "local"), default="global")
    fit.add_argument("--adaptive", action="store_true", help="select the L closest sources per query")
    fit.add_argument("--lambda", dest="lam", type=_auto_or(float), default="auto")
    fit.add_argument("--lambda-grid", default="scaled",
                     help="lambda candidates for CV: 'scaled' (data-scaled), 'coarse' (0 to 3 by 0.1) "
                          "or a comma list")
    fit.add_argument("--l", dest="L", type=_auto_or(int), default="auto")
    fit.add_argument("--bandwidth", type=_auto_or(float), default="auto")
    fit.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    fit.add_argument("--grid-size", type=int, default=500, help="grid for sample-mode studies")
    fit.add_argument("--folds", type=int, default=5)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--ridge", type=float, default=None)
    fit.add_argument("--shared-selection", action="store_true",
                     help="choose one informative set for all queries from averaged scores")
    fit.add_argument("--out", type=Path, required=True, help="output directory")

    st = sub.add_parser("selftest", help="run the fast acceptance checks")
    st.add_argument("--inject", choices=("corrupt-grid",), default=None, help=argparse.SUPPRESS)
    return parser


def _lambda_grid(text: str):
    if text == "scaled":
        return "scaled"
    if text == "coarse":
        return COARSE_LAMBDA_GRID
    try:
        grid = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--lambda-grid: expected 'scaled', 'coarse' or numbers, got {text!r}") from None
    return grid


def cmd_simulate(args) -> int:
    psi = args.psi if args.psi is not None else [round(0.1 * (k + 1), 10) for k in range(args.k)]
    if len(psi) != args.k:
        raise UsageError(f"--psi lists {len(psi)} values but --k is {args.k}")
    if args.source_sizes is not None and len(args.source_sizes) != args.k:
        raise UsageError(f"--source-sizes lists {len(args.source_sizes)} values but --k is {args.k}")
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    bad = sorted(set(estimators) - set(ESTIMATORS))
    if bad:
        raise UsageError(f"--estimators: unknown {bad}; choose from {', '.join(ESTIMATORS)}")
    extra = {"lambda_grid": _lambda_grid(args.lambda_grid)}
    report = ExperimentReport()
    workers = default_workers() if args.workers is None else args.workers
    for n0 in args.n0:
        for tau in args.tau:
            try:
                config = SimConfig(
                    K=args.k, n0=n0, tau=tau, psi=tuple(psi), reps=args.reps, n_eval=args.n_eval,
                    seed=args.seed, grid_size=args.grid_size, estimators=estimators,
                    source_sizes=None if args.source_sizes is None else tuple(args.source_sizes),
                    lam="cv" if args.lam == "auto" else args.lam,
                    L="cv" if args.L == "auto" else args.L, cv_folds=args.folds,
                    selection=args.selection, **extra)
            except InvalidArgument as exc:
                raise UsageError(str(exc)) from None
            report.extend(run_experiment(config, workers=workers))

    rows = []
    for cell in report.cells:
        c = cell["config"]
        for name, s in cell["rmspr"].items():
            rows.append([str(c["n0"]), str(c["tau"]), str(c["K"]), ";".join(repr(p) for p in c["psi"]),
                         name, s["mean"], s["sd"], str(s["n"])])
    atomic_write_text(args.out / "results.csv",
                      csv_text(["n0", "tau", "K", "psi", "estimator", "mean_rmspr", "sd_rmspr", "reps"], rows))
    sel_rows = []
    for cell in report.cells:
        c = cell["config"]
        for k, rate in enumerate(cell.get("selection_rates", [])):
            sel_rows.append([str(c["n0"]), str(c["tau"]), str(k + 1), repr(c["psi"][k]), rate])
    if sel_rows:
        atomic_write_text(args.out / "selection.csv",
                          csv_text(["n0", "tau", "source", "psi", "selection_rate"], sel_rows))
    atomic_write_text(args.out / "report.json", json_text(report.to_dict(timing=args.timing)))
    for row in rows:
        print(f"n0={row[0]} tau={row[1]} {row[4]:<12} mean RMSPR {row[5]:.6f} (sd {row[6]:.6f})")
    if report.failures:
        print(f"{len(report.failures)} replication(s) failed; see report.json", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fit_predict(args) -> int:
    target, sources = load_dataset(args.manifest)
    if args.mode == "local" and target.p != 1:
        raise UsageError(
            f"--mode local supports a scalar predictor only (local Fréchet regression), "
            f"but the dataset has p={target.p} covariates")
    Z, names, _ = read_covariates(args.query)
    if Z.shape[1] != target.p:
        raise DataError(f"query file has {Z.shape[1]} covariates, dataset has {target.p}", args.query)
    extra = {"lambda_grid": _lambda_grid(args.lambda_grid)}
    try:
        config = TransferConfig(
            mode=args.mode, lam="cv" if args.lam == "auto" else args.lam,
            L="cv" if args.L == "auto" else args.L, kernel=args.kernel,
            bandwidth="cv" if args.bandwidth == "auto" else args.bandwidth,
            grid_size=args.grid_size, ridge=args.ridge, cv_folds=args.folds, seed=args.seed,
            shared_selection=args.shared_selection, **extra)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    if args.adaptive and not isinstance(config.L, str) and config.L > len(sources):
        raise UsageError(f"--l {config.L} exceeds the number of sources ({len(sources)})")
    fit = predict_many(target, sources, Z, config, adaptive=args.adaptive)

    M = fit.grid.M
    rows = ([*map(float, z), *pred] for z, pred in zip(Z, fit.predictions))
    atomic_write_text(args.out / "predictions.csv", csv_text([*names, *grid_header(M)], rows))
    labels = [s.label for s in sources]
    queries = []
    for i in range(len(fit)):
        sel = [int(k) + 1 for k in np.flatnonzero(fit.selected[i])]
        queries.append({
            "query": Z[i].tolist(),
            "discrepancies": None if fit.discrepancies is None else fit.discrepancies[i].tolist(),
            "selected": sel,
            "selected_labels": [labels[k - 1] for k in sel],
            "weight_sum_residuals": fit.weight_sum_residuals[i].tolist(),
        })
    report = {
        "mode": args.mode,
        "adaptive": bool(args.adaptive),
        "lambda": fit.lam,
        "L": fit.L,
        "bandwidth": fit.bandwidth,
        "grid_size": M,
        "target": target.label,
        "sources": labels,
        "small_sources": [labels[k] for k in fit.small_sources],
        "cv_trace": fit.cv_trace,
        "queries": queries,
    }
    atomic_write_text(args.out / "report.json", json_text(report))
    print(f"wrote {len(fit)} predictions (lambda={fit.lam:g}"
          + (f", L={fit.L}" if fit.L is not None else "")
          + (f", h={fit.bandwidth:g}" if fit.bandwidth is not None else "") + f") to {args.out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return EXIT_OK if run_selftest(inject=args.inject) else EXIT_NUMERIC


COMMANDS = {"simulate": cmd_simulate, "fit-predict": cmd_fit_predict, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgument as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WatlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
