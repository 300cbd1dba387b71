"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
Every artifact starts with a header holding the tool version, the seed and
the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapPlan, empirical_improve, resolve_initial, ridge_tau2
from .datamodel import (
    add_pairwise_interactions,
    drop_collinear,
    load_csv,
    load_unlabeled_csv,
    save_cache,
    top_tvalue_columns,
    write_csv,
)
from .errors import ConfigError, DataFormatError, SignalLevelError
from .naive import (
    Estimate,
    beta_sq_hat_all,
    dicker_tau2,
    naive_tau2,
    sample_var_y,
    sigma2_hat,
    var_naive_gaussian_hat,
    var_naive_ustat_hat,
    w_matrix,
)
from .simgen import (
    MIN_CORRELATION_REPS,
    ScenarioConfig,
    correlation_study,
    run_scenario,
    subsample_study,
    synthetic_dataset,
)
from .whitening import CovariateModel, estimate_moments, whiten
from .zeroest import (
    ANALYTIC,
    EMPIRICAL,
    SelectionResult,
    c_hat,
    improve_single,
    pairwise_zero_stat,
    select,
    t_selection_linear,
    var_selection_hat,
    var_single_hat,
)

log = logging.getLogger("signal_level")

ESTIMATE_CHOICES = ("naive", "dicker", "single", "selection", "selection_h", "full_psi", "ridge")


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- artifacts


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _header(command, seed, config):
    return {"tool": "signal_level", "version": __version__, "command": command,
            "seed": seed, "config": _clean(config)}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return str(v)


def render(fmt, command, seed, config, result, columns=None, rows=None) -> str:
    """Serialize an artifact as JSON, or as CSV with ``#`` header lines."""
    head = _header(command, seed, config)
    if fmt == "json":
        return json.dumps({**head, "result": _clean(result)}, indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# tool: signal_level {__version__}\n")
    buf.write(f"# command: {command}\n")
    buf.write(f"# seed: {seed}\n")
    buf.write(f"# config: {json.dumps(head['config'], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- helpers


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _read_json(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _response(args):
    r = args.response
    if r is None:
        return -1
    return int(r) if r.lstrip("-").isdigit() else r


def _load_labeled(args):
    return load_csv(args.data, _response(args), has_header=not args.no_header)


def _moments(args, d):
    """Whitened dataset, the moment model and the whitened unlabeled sample (if any)."""
    if args.moments and args.unlabeled:
        raise UsageError("give either --moments or --unlabeled, not both")
    u_white = None
    if args.moments:
        model = CovariateModel.from_dict(_read_json(args.moments))
    elif args.unlabeled:
        u = load_unlabeled_csv(args.unlabeled, has_header=not args.no_header)
        if u.p != d.p:
            raise DataFormatError(f"unlabeled data has {u.p} columns, labeled covariates have {d.p}")
        model = estimate_moments(u, args.bandwidth)
        u_white = whiten(model, u)
    elif args.assume_whitened:
        return d.__class__(d.x, d.y, True, d.column_names), None, None
    else:
        raise UsageError("covariate moments needed: pass --unlabeled, --moments or --assume-whitened")
    if model.p != d.p:
        raise DataFormatError(f"moment model has p={model.p}, data has p={d.p}")
    dw = whiten(model, d)
    if args.center:
        dw = dw.with_response(dw.y - dw.y.mean())
    return dw, model, u_white


def _selection(args, d) -> SelectionResult:
    proc = args.select
    if proc not in ("gap", "all"):
        path = Path(proc)
        if not path.is_file():
            raise UsageError(f"--select must be gap, all or a file of indices; {proc!r} not found")
        proc = [int(t) for t in path.read_text().replace(",", " ").split()]
    return select(d, proc, args.split_seed)


def _fourth_moments(d, u_white):
    x = u_white.x if u_white is not None else d.x
    return np.mean(x**4, axis=0)


def run_estimators(d, names, *, variance="gaussian", select_proc="gap", split_seed=None,
                   var_source=ANALYTIC, unlabeled=None, seed=0):
    """Estimate records for each requested estimator on whitened data."""
    w = w_matrix(d)
    naive = naive_tau2(w)
    if variance == "ustat":
        var_naive = var_naive_ustat_hat(w)
    else:
        var_naive = var_naive_gaussian_hat(naive.value, sample_var_y(d.y), d.n, d.p)
    records = []
    for name in names:
        if name == "naive":
            est = naive.with_variance(var_naive)
            noise = sigma2_hat(d, est)
            est = replace(est, details={"sigma2": noise.value})
            records.append(est.with_flag("negative_sigma2") if noise.flags else est)
        elif name == "dicker":
            records.append(Estimate(dicker_tau2(d), "dicker"))
        elif name in ("single", "selection_h"):
            if name == "single":
                s = None
            else:
                sel = select(d, select_proc, split_seed) if not isinstance(select_proc, SelectionResult) else select_proc
                s = sel.set
                if len(s) < 2:
                    # no pairwise zero-estimator on fewer than two covariates
                    fallback = replace(naive.with_variance(var_naive), method="selection_h", selection_set=s)
                    records.append(fallback.with_flag("selection_too_small_naive_fallback"))
                    continue
            z = pairwise_zero_stat(d, s, var_source, unlabeled)
            est = improve_single(naive, c_hat(w, d, z), z)
            records.append(est.with_variance(var_single_hat(var_naive, w, d, z)))
        elif name in ("selection", "full_psi"):
            if name == "full_psi":
                sel = SelectionResult(tuple(range(d.p)), "all")
                split = None
            else:
                sel = select(d, select_proc, split_seed) if not isinstance(select_proc, SelectionResult) else select_proc
                split = split_seed
            est = t_selection_linear(w, d, sel, split)
            b = beta_sq_hat_all(w)[list(sel.set)]
            m4 = _fourth_moments(d, unlabeled)[list(sel.set)] if variance == "ustat" else None
            records.append(est.with_variance(var_selection_hat(var_naive, b, d.n, m4)))
        elif name == "ridge":
            records.append(Estimate(ridge_tau2(d, seed=seed), "ridge"))
        else:
            raise UsageError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATE_CHOICES)}")
    return records


def _records_table(records):
    cols = ["method", "value", "variance_hat", "raw_variance_hat", "sigma2", "selection_set", "flags"]
    rows = [[r.method, r.value, r.variance_hat, r.raw_variance_hat, (r.details or {}).get("sigma2"),
             "" if r.selection_set is None else " ".join(map(str, r.selection_set)),
             " ".join(r.flags)] for r in records]
    return cols, rows


def _summary_artifact(args, command, seed, config, summary):
    result = summary.to_dict()
    return render(args.output, command, seed, config, result,
                  list(summary.TABLE_COLUMNS), summary.table_rows())


def _write_values(path, summary):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", *summary.names])
        for i, row in enumerate(summary.values):
            w.writerow([i, *[_fmt(float(v)) for v in row]])


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    doc = _read_json(args.config)
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
    if args.replications is not None:
        doc = {**doc, "replications": args.replications}
    cfg = ScenarioConfig.from_dict(doc)
    summary = run_scenario(cfg, threads=args.threads)
    if args.values:
        _write_values(args.values, summary)
    emit(args, _summary_artifact(args, "simulate", cfg.seed, cfg.to_dict(), summary))
    return 0


def cmd_estimate(args) -> int:
    # parent parsers share action objects, so per-command defaults are resolved here
    args.select = args.select or "gap"
    d = _load_labeled(args)
    dw, model, u_white = _moments(args, d)
    names = _split_list(args.estimator)
    if args.var_source == EMPIRICAL and u_white is None:
        raise UsageError("--var-source empirical_unlabeled needs --unlabeled")
    sel = _selection(args, dw) if any(n in ("selection", "selection_h") for n in names) else None
    seed = args.seed or 0
    records = run_estimators(dw, names, variance=args.variance, select_proc=sel or "gap",
                             split_seed=args.split_seed, var_source=args.var_source,
                             unlabeled=u_white, seed=seed)
    config = {"data": args.data, "response": args.response, "estimators": names,
              "variance": args.variance, "select": args.select, "split_seed": args.split_seed,
              "var_source": args.var_source, "bandwidth": args.bandwidth, "center": args.center,
              "moments": model.to_dict() if model is not None and args.moments else None,
              "unlabeled": args.unlabeled, "n": dw.n, "p": dw.p}
    cols, rows = _records_table(records)
    emit(args, render(args.output, "estimate", seed, config,
                      [r.to_dict() for r in records], cols, rows))
    return 0


def cmd_improve(args) -> int:
    args.select = args.select or "all"
    d = _load_labeled(args)
    dw, _, u_white = _moments(args, d)
    seed = args.seed or 0
    est = resolve_initial(args.initial, seed=seed)
    s = None
    if args.select != "all":
        s = _selection(args, dw).set
    plan = BootstrapPlan(m=args.M, seed=seed)
    var_source = args.var_source
    if var_source == EMPIRICAL and u_white is None:
        raise UsageError("--var-source empirical_unlabeled needs --unlabeled")
    if s is not None and len(s) < 2:
        result = Estimate(est(dw), "initial", selection_set=s,
                          flags=("selection_too_small_initial_returned",))
    else:
        result = empirical_improve(dw, est, plan, s, var_source, u_white)
    config = {"data": args.data, "response": args.response, "initial": args.initial, "M": args.M,
              "select": args.select, "var_source": var_source, "bandwidth": args.bandwidth,
              "center": args.center, "n": dw.n, "p": dw.p}
    cols, rows = _records_table([result])
    emit(args, render(args.output, "improve", seed, config, result.to_dict(), cols, rows))
    return 0


def cmd_preprocess(args) -> int:
    d = _load_labeled(args)
    p_in = d.p
    if args.log_response:
        if np.any(d.y <= 0):
            raise DataFormatError("--log-response needs a strictly positive response")
        d = d.with_response(np.log(d.y))
    spec = args.interactions
    if spec == "all":
        d = add_pairwise_interactions(d)
    elif spec.startswith("top:"):
        k = int(spec[4:])
        d = add_pairwise_interactions(d, top_tvalue_columns(d, k))
    elif spec != "none":
        d = add_pairwise_interactions(d, [int(t) for t in _split_list(spec)])
    p_expanded = d.p
    kept = list(range(d.p))
    if not args.no_prune:
        d, kept = drop_collinear(d, args.collinear_tol)
    write_csv(d, args.out_data, response_name=args.response_name)
    if args.cache:
        save_cache(d, args.cache)
    config = {"data": args.data, "response": args.response, "interactions": spec,
              "collinear_tol": args.collinear_tol, "prune": not args.no_prune,
              "log_response": args.log_response, "out_data": args.out_data}
    result = {"n": d.n, "p_in": p_in, "p_expanded": p_expanded, "p_out": d.p,
              "kept": kept, "columns": list(d.names())}
    emit(args, render(args.output, "preprocess", args.seed or 0, config, result,
                      ["n", "p_in", "p_expanded", "p_out"], [[d.n, p_in, p_expanded, d.p]]))
    return 0


def _bench_data(args):
    if args.synthetic:
        return synthetic_dataset(n_total=args.synthetic_n, seed=args.synthetic_seed)
    if not args.data:
        raise UsageError("give a data file or --synthetic")
    return _load_labeled(args)


def cmd_realbench(args) -> int:
    d = _bench_data(args)
    n_sub = args.n_sub or d.p
    names = _split_list(args.estimators)
    seed = args.seed or 0
    summary = subsample_study(d, n_sub, args.reps, names, seed=seed, bandwidth=args.bandwidth,
                              var_source=args.var_source, center_response=not args.no_center,
                              bootstrap_m=args.M, threads=args.threads)
    config = {**summary.config, "data": args.data, "synthetic": args.synthetic,
              "synthetic_n": args.synthetic_n if args.synthetic else None,
              "synthetic_seed": args.synthetic_seed if args.synthetic else None}
    if args.values:
        _write_values(args.values, summary)
    emit(args, _summary_artifact(args, "realbench", seed, config, summary))
    return 0


def cmd_correlate(args) -> int:
    if args.reps < MIN_CORRELATION_REPS:
        raise UsageError(f"--reps must be at least {MIN_CORRELATION_REPS}, got {args.reps}")
    d = _bench_data(args)
    seed = args.seed or 0
    table = correlation_study(d, args.n_sub or d.p, args.reps, _split_list(args.initial),
                              _split_list(args.zero), seed=seed, bandwidth=args.bandwidth,
                              center_response=not args.no_center, threads=args.threads)
    config = {**table.config, "data": args.data, "synthetic": args.synthetic}
    rows = [[name, *table.matrix[i]] for i, name in enumerate(table.initial)]
    emit(args, render(args.output, "correlate", seed, config, table.to_dict(),
                      ["initial", *table.zero], rows))
    return 0


# ---------------------------------------------------------------- parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads for replicates")
    common.add_argument("--output", choices=("json", "csv"), default="json", help="artifact format")
    common.add_argument("--out", metavar="PATH", help="write the artifact here instead of stdout")
    common.add_argument("--quiet", action="store_true", help="only log errors")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--response", help="response column name or 0-based index (default: last)")
    data.add_argument("--no-header", action="store_true", help="CSV files have no header row")

    moments = argparse.ArgumentParser(add_help=False)
    moments.add_argument("--unlabeled", metavar="CSV", help="unlabeled covariate rows")
    moments.add_argument("--moments", metavar="JSON", help="covariate model document")
    moments.add_argument("--assume-whitened", action="store_true",
                         help="treat covariates as already mean 0, identity covariance")
    moments.add_argument("--bandwidth", type=int, default=None, help="banded covariance estimate")
    moments.add_argument("--center", action="store_true", help="subtract the mean response")
    moments.add_argument("--var-source", choices=(ANALYTIC, EMPIRICAL), default=ANALYTIC)
    moments.add_argument("--select", default=None,
                         help="gap, all, or a file of 0-based indices (default: gap for estimate, all for improve)")
    moments.add_argument("--split-seed", type=int, default=None, help="select on a seeded half split")

    bench = argparse.ArgumentParser(add_help=False)
    bench.add_argument("data", nargs="?", help="dataset CSV")
    bench.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
    bench.add_argument("--synthetic-n", type=_positive_int, default=20000)
    bench.add_argument("--synthetic-seed", type=int, default=0)
    bench.add_argument("--n-sub", type=_positive_int, default=None, help="labeled subsample size (default p)")
    bench.add_argument("--bandwidth", type=int, default=None)
    bench.add_argument("--no-center", action="store_true", help="keep the raw response")

    parser = argparse.ArgumentParser(prog="signal-level", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo scenario")
    p.add_argument("config", help="scenario JSON document")
    p.add_argument("--replications", type=_positive_int, default=None)
    p.add_argument("--values", metavar="CSV", help="also dump per-replicate values")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common, data, moments], help="estimate the signal level")
    p.add_argument("data")
    p.add_argument("--estimator", default="naive", help=f"comma list from {','.join(ESTIMATE_CHOICES)}")
    p.add_argument("--variance", choices=("gaussian", "ustat"), default="gaussian")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("improve", parents=[common, data, moments], help="bootstrap-improve an estimator")
    p.add_argument("data")
    p.add_argument("--initial", default="naive", help="naive, ridge or cmd:<program>")
    p.add_argument("--M", type=int, default=100, help="bootstrap replications")
    p.set_defaults(func=cmd_improve)

    p = sub.add_parser("preprocess", parents=[common, data], help="interactions and collinearity pruning")
    p.add_argument("data")
    p.add_argument("--out-data", required=True, metavar="CSV")
    p.add_argument("--interactions", default="none", help="none, all, top:K or a comma list of indices")
    p.add_argument("--collinear-tol", type=float, default=1e-8)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--log-response", action="store_true")
    p.add_argument("--response-name", default="y")
    p.add_argument("--cache", metavar="NPZ", help="also write a binary cache")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("realbench", parents=[common, data, bench], help="subsampling benchmark")
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--estimators", default="naive,single,selection_h")
    p.add_argument("--var-source", choices=(ANALYTIC, EMPIRICAL), default=ANALYTIC)
    p.add_argument("--M", type=int, default=100, help="bootstrap replications for boot_* estimators")
    p.add_argument("--values", metavar="CSV")
    p.set_defaults(func=cmd_realbench)

    p = sub.add_parser("correlate", parents=[common, data, bench], help="initial/zero-estimator correlations")
    p.add_argument("--reps", type=int, default=300)
    p.add_argument("--initial", default="naive")
    p.add_argument("--zero", default="single,selection")
    p.set_defaults(func=cmd_correlate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SignalLevelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
