"""Command-line interface: ``detvi <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 predictor failure,
4 degenerate scores or non-convergence, 5 partial benchmark failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__
from .data import BUNDLED_TARGETS, DataMatrix, bundled_path, kfold, load_csv
from .direct import DIFF_METRICS, DROP_METRICS, breiman_scores, direct_scores, dominance_check
from .errors import ConfigError, DetviError, PredictorError
from .predictors import (
    GROUND_TRUTH_CONVENTIONS,
    LinearModel,
    PredictorHandle,
    fit_excluding,
    fit_lasso,
    fit_logistic,
    fit_ols,
    fit_sparse,
)
from .simulation import (
    GRID_N,
    GRID_P,
    GRID_RHO,
    GRID_SIGMA,
    MASTERS,
    METHOD_NAMES,
    RESPONSES,
    SCORE_METRICS,
    TASKS,
    default_grid,
    flicker_analysis,
    run_grid,
    summary_tables,
)
from .systemic import audit_feature, calibrate_threshold, systemic_scores, write_heatmap_csv

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_PREDICTOR, EXIT_DEGENERATE, EXIT_PARTIAL = 0, 2, 3, 4, 5
# options that may repeat on the command line; comma-separated in config files
LIST_OPTIONS = ("exclude", "task", "response", "master", "n", "p", "sigma", "rho", "methods")


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use dashes or underscores."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------- data/model


def resolve_data(args):
    """``--data`` is a CSV path or the name of a bundled dataset."""
    name = args.data
    if name is None:
        raise ConfigError("--data is required")
    target = args.target
    if name in BUNDLED_TARGETS and not Path(name).exists():
        path = bundled_path(name)
        target = target or BUNDLED_TARGETS[name]
    else:
        path = Path(name)
    if not target:
        raise ConfigError("--target is required for non-bundled data")
    return load_csv(path, target, args.encode)


def parse_model_spec(spec: str):
    """``ols``, ``lasso:lambda=0.1``, ``lasso:nonzero=3``, ``logistic``,
    ``l1-logistic:lambda=..`` or ``l1-logistic:nonzero=..``."""
    kind, _, rest = spec.partition(":")
    params = {}
    for part in filter(None, rest.split(",")):
        key, eq, value = part.partition("=")
        if not eq:
            raise ConfigError(f"bad model parameter {part!r} in {spec!r}")
        params[key.strip()] = value.strip()
    if kind not in ("ols", "lasso", "logistic", "l1-logistic"):
        raise ConfigError(f"unknown model {kind!r}; expected ols, lasso, logistic or l1-logistic")
    unknown = set(params) - {"lambda", "nonzero"}
    if unknown:
        raise ConfigError(f"unknown model parameter(s) {sorted(unknown)} in {spec!r}")
    if kind in ("ols", "logistic") and params:
        raise ConfigError(f"model {kind!r} takes no parameters")
    if "lambda" in params and "nonzero" in params:
        raise ConfigError("give either lambda= or nonzero=, not both")
    try:
        if "lambda" in params:
            params["lambda"] = float(params["lambda"])
        if "nonzero" in params:
            params["nonzero"] = int(params["nonzero"])
    except ValueError:
        raise ConfigError(f"bad numeric model parameter in {spec!r}") from None
    return kind, params


def model_fitter(spec: str, task: str, class_balance: bool = True):
    kind, params = parse_model_spec(spec)
    if task == "regression" and kind in ("logistic", "l1-logistic"):
        raise ConfigError(f"model {kind!r} needs a classification target")
    if task == "classification" and kind in ("ols", "lasso"):
        raise ConfigError(f"model {kind!r} needs a regression target")
    if kind == "ols":
        return fit_ols
    if kind == "logistic":
        return lambda X, y: fit_logistic(X, y, "none", class_balance=class_balance)
    if "lambda" in params:
        lam = params["lambda"]
        if kind == "lasso":
            return lambda X, y: fit_lasso(X, y, lam)
        return lambda X, y: fit_logistic(X, y, "l1", lam, class_balance)
    k = params.get("nonzero", 1)
    return lambda X, y: fit_sparse(X, y, task, k, class_balance)


def default_model(task: str) -> str:
    return "ols" if task == "regression" else "logistic"


def build_handle(args, X: DataMatrix, y):
    """Predictor for ``(X, y)``: external command, saved model, or a fresh fit."""
    if args.external:
        if args.exclude:
            raise ConfigError("--exclude only applies to built-in models")
        q = args.q or (1 if y.task == "regression" else y.n_classes)
        return PredictorHandle.external(args.external, q, args.timeout, y.task), None
    if args.model_file:
        model = LinearModel.load(args.model_file)
        if model.p != X.p:
            raise ConfigError(f"{args.model_file}: model has {model.p} features, data has {X.p}")
        return PredictorHandle.builtin(model), model
    fit = model_fitter(args.model or default_model(y.task), y.task, not args.no_class_balance)
    if args.exclude:
        unknown = [e for e in args.exclude if e not in X.names]
        if unknown:
            raise ConfigError(f"unknown feature(s) to exclude: {unknown}")
        model = fit_excluding(fit, X, y, [X.index_of(e) for e in args.exclude])
    else:
        model = fit(X, y)
    return PredictorHandle.builtin(model), model


# ---------------------------------------------------------------- output


def effective_config(args) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not serializable: {type(v).__name__}")


def envelope(command: str, args, **body) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": effective_config(args),
        **body,
    }


def write_rows(path, header, rows, comments=()) -> None:
    with Path(path).open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def metric_name(text: str) -> str:
    upper = text.upper()
    if upper in DIFF_METRICS:
        return upper
    raise ConfigError(f"unknown metric {text!r}; expected one of {', '.join(DIFF_METRICS)}")


# ---------------------------------------------------------------- commands


def cmd_importance(args) -> int:
    X, y = resolve_data(args)
    metric = metric_name(args.metric)
    handle, model = build_handle(args, X, y)
    with handle:
        report = direct_scores(handle, X, metric, args.scheme, args.workers, args.prescreen_eps)
        body = {"report": report.as_dict(timing=False)}
        timing = {"direct_ms": report.runtime_ms}
        if args.compare_breiman:
            B = args.compare_breiman
            base = breiman_scores(handle, X, y, B, args.seed, args.baseline_metric, args.workers)
            body["breiman"] = base.as_dict(timing=False)
            timing["breiman_ms"] = base.runtime_ms
            if B >= 2:
                body["dominance_check"] = dominance_check(handle, X, metric, B, args.seed, args.scheme).as_dict()
    if model is not None:
        body["model"] = model.to_dict()
        if args.save_model:
            model.save(args.save_model)
    d = out_dir(args)
    write_json(d / "importance.json", envelope("importance", args, **body))
    write_json(d / "timing.json", timing)
    rows = [[n, _fmt(r), _fmt(v)] for n, r, v in zip(report.features, report.raw, report.normalized)]
    write_rows(d / "importance.csv", ["feature", "raw", "normalized"], rows, [f"method: {report.method}", f"metric: {metric}"])
    print(f"{report.method} ({metric}) on {X.n} rows; top features:")
    for j in report.top_k(min(5, X.p)):
        print(f"  {X.names[j]:<28} {report.normalized[j]:.6f}")
    if "dominance_check" in body:
        dc = body["dominance_check"]
        print(f"dominance check B={dc['B']}: lhs={dc['lhs']:.6g} rhs={dc['rhs_consistent']:.6g} -> {dc['verdict_consistent']}")
    print(f"wrote {d / 'importance.json'}")
    return EXIT_OK


def _average(vectors):
    return np.mean(np.vstack(vectors), axis=0)


def cmd_systemic(args) -> int:
    X, y = resolve_data(args)
    metric = metric_name(args.metric)
    if args.protected and args.protected not in X.names:
        raise ConfigError(f"unknown protected feature {args.protected!r}")
    if args.folds < 1:
        raise ConfigError("--folds must be >= 1")
    if args.folds == 1:
        splits = [(np.arange(X.n), np.arange(X.n))]
    else:
        plan = kfold(X.n, args.folds, args.split_seed)
        splits = [(plan.train_rows(f), plan.test_rows(f)) for f in range(args.folds)]

    folds, audits = [], []
    for train, test in splits:
        Xtr, Xte = X.take_rows(train), X.take_rows(test)
        handle, _ = build_handle(args, Xtr, y.take(train))
        with handle:
            graph = calibrate_threshold(Xtr, args.alpha, args.seed)
            report = systemic_scores(handle, Xte, graph, metric, args.scheme, args.workers)
            if args.protected:
                audits.append(audit_feature(handle, Xte, graph, args.protected, metric=metric, scheme=args.scheme, report=report))
        folds.append((graph, report))

    s = _average([r.systemic for _, r in folds])
    dd = _average([r.direct for _, r in folds])
    i = s - dd
    taus = [g.tau for g, _ in folds]
    full_graph = calibrate_threshold(X, args.alpha, args.seed)
    quantile = f"tolerance quantile: {1.0 - args.alpha:g}"

    body = {
        "tolerance_quantile": 1.0 - args.alpha,
        "header": quantile,
        "method": folds[0][1].method,
        "metric": metric,
        "features": X.names,
        "systemic": s.tolist(),
        "direct": dd.tolist(),
        "indirect": i.tolist(),
        "tau": full_graph.tau,
        "fold_tau": taus,
        "folds": [r.as_dict(timing=False) for _, r in folds],
    }
    if args.protected:
        share = float(np.mean([a.proxy_influenced_share for a in audits]))
        proxies = {}
        for a in audits:
            for name, rho in a.proxies:
                proxies.setdefault(name, []).append(rho)
        body["audit"] = {
            "feature": args.protected,
            "systemic": float(np.mean([a.systemic for a in audits])),
            "direct": float(np.mean([a.direct for a in audits])),
            "indirect": float(np.mean([a.indirect for a in audits])),
            "proxies": [
                {"feature": k, "rho_mean": float(np.mean(v)), "folds": len(v)} for k, v in sorted(proxies.items())
            ],
            "proxy_influenced_share": share,
            "per_fold": [a.as_dict() for a in audits],
        }

    d = out_dir(args)
    write_json(d / "systemic.json", envelope("systemic", args, **body))
    rows = [[n, _fmt(a), _fmt(b), _fmt(c)] for n, a, b, c in zip(X.names, s, dd, i)]
    write_rows(d / "systemic.csv", ["feature", "systemic", "direct", "indirect"], rows, [quantile, f"metric: {metric}"])
    write_heatmap_csv(d / "correlation.csv", full_graph.matrix, X.names)
    edges = [[X.names[a], X.names[b], _fmt(r)] for a, b, r in full_graph.edges]
    write_rows(d / "edges.csv", ["feature_a", "feature_b", "rho"], edges, [quantile, f"tau: {full_graph.tau:.17g}"])

    print(quantile)
    print(f"tau = {full_graph.tau:.6f} ({len(edges)} edges); folds: {len(folds)}")
    order = np.argsort(-s, kind="stable")
    print(f"  {'feature':<28} {'systemic':>10} {'direct':>10} {'indirect':>10}")
    for j in order[: min(10, X.p)]:
        print(f"  {X.names[j]:<28} {s[j]:>10.6f} {dd[j]:>10.6f} {i[j]:>10.6f}")
    if args.protected:
        a = body["audit"]
        print(
            f"audit {a['feature']}: s={a['systemic']:.6g} d={a['direct']:.6g} i={a['indirect']:.6g}; "
            f"proxies: {[p['feature'] for p in a['proxies']] or 'none'}"
        )
    print(f"wrote {d / 'systemic.json'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    X, _ = resolve_data(args)
    graph = calibrate_threshold(X, args.alpha, args.seed)
    d = out_dir(args)
    body = {
        "tolerance_quantile": 1.0 - args.alpha,
        "tau": graph.tau,
        "features": X.names,
        "edges": [{"a": X.names[a], "b": X.names[b], "rho": r} for a, b, r in graph.edges],
        "null_sample_size": int(graph.null_sample.size),
    }
    write_json(d / "calibration.json", envelope("calibrate", args, **body))
    write_heatmap_csv(d / "correlation.csv", graph.matrix, X.names)
    print(f"tolerance quantile: {1.0 - args.alpha:g}")
    print(f"tau = {graph.tau:.17g} from {graph.null_sample.size} null pairs; {len(graph.edges)} edges above tau")
    return EXIT_OK


def _grid_from_args(args):
    return default_grid(
        args.reps,
        args.base_seed,
        n=tuple(int(v) for v in args.n),
        p=tuple(int(v) for v in args.p),
        sigma=tuple(float(v) for v in args.sigma),
        rho=tuple(float(v) for v in args.rho),
        response=tuple(args.response),
        task=tuple(args.task),
        master=tuple(args.master),
    )


SCENARIO_COLUMNS = ["scenario", "task", "response", "master", "n", "p", "sigma_eps", "rho", "reps"]


def _scenario_cells(spec):
    return [spec.index, spec.task, spec.response, spec.master, spec.n, spec.p, _fmt(spec.sigma_eps), _fmt(spec.rho), spec.reps]


def _tidy_rows(results, metrics):
    rows = []
    for r in results:
        for m in METHOD_NAMES:
            for metric in metrics:
                v = r.values(m, metric)
                mean = float(v.mean()) if v.size else None
                se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else (0.0 if v.size else None)
                lo = None if mean is None else mean - 2 * se
                hi = None if mean is None else mean + 2 * se
                rows.append(_scenario_cells(r.spec) + [m, metric, v.size, _fmt(mean), _fmt(se), _fmt(lo), _fmt(hi)])
    return rows


def cmd_benchmark(args) -> int:
    grid = _grid_from_args(args)
    if not grid:
        raise ConfigError("the grid filters select no scenarios")
    d = out_dir(args)
    total = len(grid)

    def progress(res):
        if not args.quiet:
            print(f"[{res.spec.index + 1}/{total}] {res.spec.label}: {len(res.errors)} failures", file=sys.stderr)

    results = run_grid(grid, args.default_metrics, args.convention, args.workers, progress=progress)
    header = SCENARIO_COLUMNS + ["method", "metric", "n_ok", "mean", "se", "band_lo", "band_hi"]
    write_rows(d / "results.csv", header, _tidy_rows(results, SCORE_METRICS))
    write_rows(d / "timings.csv", header, _tidy_rows(results, ("runtime_ms",)))
    failures = [[r.spec.index, r.spec.label, e] for r in results for e in r.errors]
    degenerate = [[r.spec.index, r.spec.label, e] for r in results for e in r.degenerate]
    write_rows(d / "failures.csv", ["scenario", "label", "error"], failures)
    write_rows(d / "degenerate.csv", ["scenario", "label", "detail"], degenerate)
    tables = summary_tables(results)
    for t in tables.values():
        t["rows"].pop("runtime_ms", None)
    body = {
        "scenarios": total,
        "ground_truth_convention": args.convention,
        "metrics": "default" if args.default_metrics else "prediction-difference MSE / mse-drop or neg-brier-drop",
        "failures": len(failures),
        "degenerate": len(degenerate),
        "tables": tables,
    }
    cfg = envelope("benchmark", args, **body)
    cfg["config"].pop("workers", None)
    cfg["config"].pop("quiet", None)
    write_json(d / "summary.json", cfg)
    for key, t in tables.items():
        print(f"{key} ({t['scenarios']} scenarios)")
        for metric in ("ground_truth_cor", "max_score_diff"):
            cells = []
            for m in METHOD_NAMES:
                agg = t["rows"][metric][m]
                cells.append(f"{m}={agg['mean']:.3f}" if agg else f"{m}=n/a")
            print(f"  {metric:<18} " + "  ".join(cells))
    print(f"wrote {d / 'results.csv'} ({total} scenarios, {len(failures)} failed cells)")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_stability(args) -> int:
    X, y = resolve_data(args)
    if args.k > X.p:
        raise ConfigError(f"--k {args.k} exceeds the number of features ({X.p})")
    methods = list(args.methods)
    for m in methods:
        if m not in ("direct-opt", "direct-approx") and not (m.startswith("breiman-") and m[8:].isdigit()):
            raise ConfigError(f"unknown method {m!r}; expected direct-opt, direct-approx or breiman-B")
    handle, _ = build_handle(args, X, y)
    with handle:
        res = flicker_analysis(methods, handle, X, y, args.runs, args.k, args.seed, metric_name(args.metric))
    rows = []
    for m in methods:
        for tup, count in sorted(res.histograms[m].items(), key=lambda kv: (-kv[1], kv[0])):
            rows.append([m, ";".join(X.names[j] for j in tup), count])
    d = out_dir(args)
    write_rows(d / "stability.csv", ["method", "top_k", "count"], rows)
    body = {
        "k": args.k,
        "runs": args.runs,
        "distinct": {m: res.distinct(m) for m in methods},
        "seeds": res.seeds,
    }
    write_json(d / "stability.json", envelope("stability", args, **body))
    for m in methods:
        print(f"{m:<14} {res.distinct(m)} distinct top-{args.k} tuple(s) over {args.runs} runs")
    return EXIT_OK


DATA_SOURCES = {
    "hmda": "https://vincentarelbundock.github.io/Rdatasets/csv/Ecdat/Hdma.csv",
    "german_credit": "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data",
}


def cmd_fetch_data(args) -> int:
    """Copy a bundled dataset; download the upstream raw file when it is absent."""
    if args.name not in BUNDLED_TARGETS:
        raise ConfigError(f"unknown dataset {args.name!r}; expected one of {sorted(BUNDLED_TARGETS)}")
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    try:
        src = None if args.download else bundled_path(args.name)
    except ConfigError:
        src = None
    if src is not None:
        target = dest / src.name
        shutil.copyfile(src, target)
        print(f"copied bundled {args.name} to {target}")
        return EXIT_OK
    url = args.url or DATA_SOURCES[args.name]
    target = dest / Path(url).name
    try:
        with urllib.request.urlopen(url, timeout=args.timeout) as resp, target.open("wb") as fh:
            shutil.copyfileobj(resp, fh)
    except OSError as exc:
        raise ConfigError(f"download of {url} failed: {exc}") from exc
    print(f"downloaded {url} to {target} (raw upstream format; see datasets/PROVENANCE.md for the cleaning steps)")
    return EXIT_OK


def cmd_serve_model(args) -> int:
    from .serve import serve

    return serve(LinearModel.load(args.model_json))


# ---------------------------------------------------------------- parser


def _add_data(p):
    p.add_argument("--data", help="CSV path or bundled dataset name (hmda, german_credit)")
    p.add_argument("--target", help="target column (defaults to the bundled dataset's target)")
    p.add_argument("--encode", default="lexicographic", choices=("lexicographic", "appearance"))


def _add_model(p):
    p.add_argument("--model", help="ols | lasso[:lambda=L|:nonzero=K] | logistic | l1-logistic[:lambda=L|:nonzero=K]")
    p.add_argument("--no-class-balance", action="store_true", help="unweighted logistic fits")
    p.add_argument("--exclude", action="append", default=[], help="fit without this feature (repeatable)")
    p.add_argument("--model-file", help="saved model JSON to use instead of fitting")
    p.add_argument("--external", help="command speaking the external predictor protocol v1")
    p.add_argument("--q", type=int, help="output columns of the external predictor")
    p.add_argument("--timeout", type=float, default=60.0, help="per-call timeout of the external predictor (s)")


def _add_scoring(p):
    p.add_argument("--metric", default="MSE", help="MAE, MSE or RMSE (case-insensitive)")
    p.add_argument("--scheme", default="optimal", choices=("optimal", "approx"))
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detvi", description="Deterministic permutation variable importance.")
    parser.add_argument("--version", action="version", version=f"detvi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("importance", help="direct importance report")
    _add_data(p)
    _add_model(p)
    _add_scoring(p)
    p.add_argument("--prescreen-eps", type=float, default=None, help="zero out features whose predictions move by at most this")
    p.add_argument("--compare-breiman", type=int, default=0, metavar="B", help="also run Breiman with B permutations and the dominance check")
    p.add_argument("--baseline-metric", choices=DROP_METRICS, default=None)
    p.add_argument("--seed", type=int, default=0, help="seed of the random baseline")
    p.add_argument("--save-model", help="write the fitted model JSON here")
    p.add_argument("--out", default="detvi-out")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("systemic", help="systemic / direct / indirect importance and optional audit")
    _add_data(p)
    _add_model(p)
    _add_scoring(p)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0, help="calibration shuffle seed")
    p.add_argument("--protected", help="feature to audit for proxies")
    p.add_argument("--folds", type=int, default=1, help="k-fold cross-fitting (1 = fit and score on all rows)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", default="detvi-out")
    p.set_defaults(func=cmd_systemic)

    p = sub.add_parser("calibrate", help="calibrate the propagation threshold")
    _add_data(p)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="detvi-out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("benchmark", help="synthetic benchmark grid")
    p.add_argument("--task", nargs="+", default=list(TASKS), choices=TASKS)
    p.add_argument("--response", nargs="+", default=list(RESPONSES), choices=RESPONSES)
    p.add_argument("--master", nargs="+", default=list(MASTERS), choices=MASTERS)
    p.add_argument("--n", nargs="+", default=list(GRID_N))
    p.add_argument("--p", nargs="+", default=list(GRID_P))
    p.add_argument("--sigma", nargs="+", default=list(GRID_SIGMA))
    p.add_argument("--rho", nargs="+", default=list(GRID_RHO))
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--default-metrics", action="store_true", help="MAE for direct methods, mse-drop/accuracy-drop for Breiman")
    p.add_argument("--convention", default="abs-beta-sd", choices=GROUND_TRUTH_CONVENTIONS)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", default="detvi-bench")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("stability", help="top-k ranking stability over repeated runs")
    _add_data(p)
    _add_model(p)
    p.add_argument("--metric", default="MSE")
    p.add_argument("--methods", nargs="+", default=list(METHOD_NAMES))
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=None, help="base seed for random methods (default: fresh per run)")
    p.add_argument("--out", default="detvi-out")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("fetch-data", help="copy or download a case-study dataset")
    p.add_argument("name", choices=sorted(BUNDLED_TARGETS))
    p.add_argument("--dest", default=".")
    p.add_argument("--download", action="store_true", help="download the upstream file even if bundled")
    p.add_argument("--url")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("serve-model", help="serve a saved model over the external predictor protocol")
    p.add_argument("model_json")
    p.set_defaults(func=cmd_serve_model)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="key = value file; command-line flags take precedence")
    return parser


def _apply_config(parser, argv):
    """Re-parse with values from ``--config`` as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = parse_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise ConfigError(f"{args.config}: unknown key {key!r} for command {args.command!r}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        convert = action.type or str
        try:
            if key in LIST_OPTIONS:
                defaults[key] = [convert(v.strip()) for v in raw.split(",") if v.strip()]
            else:
                defaults[key] = convert(raw)
        except ValueError:
            raise ConfigError(f"{args.config}: bad value for {key!r}: {raw!r}") from None
        if action.choices and any(v not in action.choices for v in np.atleast_1d(defaults[key]).tolist()):
            raise ConfigError(f"{args.config}: {key} must be one of {list(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except PredictorError as exc:
        print(f"error: predictor failed: {exc}", file=sys.stderr)
        return EXIT_PREDICTOR
    except DetviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
