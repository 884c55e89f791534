"""Synthetic benchmark: data generators, scenario grid, runner and flicker analysis."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import DataMatrix, TargetVector, as_matrix, as_target
from .direct import breiman_scores, default_baseline, direct_scores, fresh_seed
from .errors import ConfigError, DegenerateImportanceError, DetviError
from .predictors import (
    PredictorHandle,
    fit_logistic,
    fit_ols,
    fit_sparse,
    ground_truth_importance,
)
from .stats import AggregateStat, combine_variance, normal_cdf, pearson, spearman

GRID_N = (100, 1000, 10000)
GRID_P = (10, 100)
GRID_SIGMA = (0.1, 5.0)
GRID_RHO = (0.0, 0.3)
RESPONSES = ("linear", "friedman")
TASKS = ("regression", "classification")
MASTERS = ("unregularized", "l1")
METHOD_NAMES = ("direct-opt", "direct-approx", "breiman-1", "breiman-10")
SCORE_METRICS = ("ground_truth_cor", "ground_truth_spearman", "max_score_diff", "mean_score_diff")
COEF_SEED = 123
TEST_FRACTION = 0.2


def block_covariance(p: int, rho: float, informative: int) -> np.ndarray:
    """Unit diagonal; ``rho`` inside the informative block, ``rho/2`` inside the
    noise block, zero across blocks."""
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    if not 0 <= informative <= p:
        raise ConfigError("informative count must lie in [0, p]")
    C = np.zeros((p, p))
    C[:informative, :informative] = rho
    C[informative:, informative:] = rho / 2.0
    np.fill_diagonal(C, 1.0)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise ConfigError("requested covariance is not positive definite") from None
    return C


def _names(p):
    return [f"x{j + 1}" for j in range(p)]


def gen_gaussian(n: int, C, seed) -> DataMatrix:
    """Rows ~ N(0, C): standard normal draws times the transposed Cholesky factor."""
    C = np.asarray(C, dtype=float)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise ConfigError("covariance matrix is not positive definite") from None
    Z = np.random.default_rng(seed).standard_normal((n, C.shape[0]))
    return DataMatrix(Z @ L.T, _names(C.shape[0]))


def gen_uniform_correlated(n: int, C, seed) -> DataMatrix:
    """Gaussian draws pushed through the normal CDF: uniform marginals, same ranks."""
    Z = gen_gaussian(n, C, seed)
    return DataMatrix(normal_cdf(Z.values), Z.feature_meta)


def friedman_mean(X) -> np.ndarray:
    X = as_matrix(X).values
    if X.shape[1] < 5:
        raise ConfigError("the Friedman response needs at least 5 features")
    x1, x2, x3, x4, x5 = (X[:, j] for j in range(5))
    return 10 * np.sin(np.pi * x1 * x2) + 20 * (x3 - 0.5) ** 2 + 10 * x4 + 5 * x5


def friedman_response(X, sigma_eps: float, seed) -> TargetVector:
    mean = friedman_mean(X)
    noise = np.random.default_rng(seed).standard_normal(mean.size) * sigma_eps
    return TargetVector(mean + noise, "regression")


def linear_coefficients(p: int, seed=COEF_SEED) -> np.ndarray:
    """Seeded coefficients: the first ``p - ceil(p/2)`` drawn with random sign
    and magnitude in [0.5, 2]; the last ``ceil(p/2)`` exactly zero."""
    if p < 2:
        raise ConfigError("linear response needs p >= 2")
    rng = np.random.default_rng(seed)
    informative = p - math.ceil(p / 2)
    beta = np.zeros(p)
    beta[:informative] = rng.uniform(0.5, 2.0, informative) * rng.choice((-1.0, 1.0), informative)
    return beta


def linear_response(X, seed=COEF_SEED, sigma_eps: float = 0.1, noise_seed=None):
    """``y = X beta + eps``; returns ``(TargetVector, beta)``.

    ``seed`` fixes the coefficients; the noise uses ``noise_seed`` (defaults
    to ``seed``).
    """
    X = as_matrix(X)
    beta = linear_coefficients(X.p, seed)
    rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
    y = X.values @ beta + rng.standard_normal(X.n) * sigma_eps
    return TargetVector(y, "regression"), beta


def binarize_median(y) -> TargetVector:
    yv = np.asarray(y.values if isinstance(y, TargetVector) else y, dtype=float)
    if yv.size < 2:
        raise ConfigError("binarize_median needs at least 2 values")
    return TargetVector((yv > np.median(yv)).astype(float), "classification", 2)


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    p: int
    sigma_eps: float
    rho: float
    response: str = "linear"
    task: str = "regression"
    master: str = "unregularized"
    reps: int = 50
    base_seed: int = 0
    index: int = 0

    def __post_init__(self):
        if self.response not in RESPONSES:
            raise ConfigError(f"unknown response {self.response!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.master not in MASTERS:
            raise ConfigError(f"unknown master {self.master!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.response == "friedman" and self.p < 5:
            raise ConfigError("the Friedman response needs p >= 5")
        if self.n < 10:
            raise ConfigError("scenarios need n >= 10")

    @property
    def informative(self) -> int:
        return 5 if self.response == "friedman" else self.p - math.ceil(self.p / 2)

    @property
    def label(self) -> str:
        return (
            f"{self.task}/{self.response}/{self.master} n={self.n} p={self.p} "
            f"sigma={self.sigma_eps:g} rho={self.rho:g}"
        )

    def key(self) -> dict:
        d = asdict(self)
        d.pop("base_seed")
        return d


def default_grid(
    reps: int = 50,
    base_seed: int = 0,
    n=GRID_N,
    p=GRID_P,
    sigma=GRID_SIGMA,
    rho=GRID_RHO,
    response=RESPONSES,
    task=TASKS,
    master=MASTERS,
) -> list:
    """Full factorial grid (192 cells by default), filtered by the given value lists."""
    specs = []
    for i, (t, r, m, nn, pp, s, c) in enumerate(itertools.product(task, response, master, n, p, sigma, rho)):
        specs.append(ScenarioSpec(nn, pp, float(s), float(c), r, t, m, reps, base_seed, i))
    return specs


@dataclass
class MethodRun:
    ground_truth_cor: float
    ground_truth_spearman: float
    max_score_diff: float
    mean_score_diff: float
    runtime_ms: float


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    runs: dict = field(default_factory=dict)  # method -> list[MethodRun | None]
    errors: list = field(default_factory=list)
    # all-zero score vectors: a valid outcome, kept apart from failures
    degenerate: list = field(default_factory=list)
    nonzero: list = field(default_factory=list)

    def values(self, method: str, metric: str) -> np.ndarray:
        vals = [getattr(r, metric) for r in self.runs.get(method, []) if r is not None]
        return np.array([v for v in vals if np.isfinite(v)], dtype=float)

    def mean_var(self, method: str, metric: str):
        v = self.values(method, metric)
        if v.size == 0:
            return math.nan, math.nan
        return float(v.mean()), float(v.var(ddof=1)) if v.size > 1 else 0.0


def _compare(scores, truth):
    try:
        cor = pearson(scores, truth)
    except ConfigError:
        cor = math.nan
    try:
        rank_cor = spearman(scores, truth)
    except ConfigError:
        rank_cor = math.nan
    diff = np.abs(np.asarray(scores) - np.asarray(truth))
    return cor, rank_cor, float(diff.max()), float(diff.mean())


def fit_master(X, y, task: str, master: str):
    if task == "regression":
        return fit_ols(X, y) if master == "unregularized" else fit_sparse(X, y, "regression", 1)
    if master == "unregularized":
        return fit_logistic(X, y, "none", class_balance=True)
    return fit_sparse(X, y, "classification", 1, class_balance=True)


def generate(spec: ScenarioSpec, rep: int, coef_seed=COEF_SEED):
    """Data for one repetition, drawn from streams keyed by (base_seed, scenario, rep)."""
    data_ss, noise_ss, split_ss, perm_ss = np.random.SeedSequence([spec.base_seed, spec.index, rep]).spawn(4)
    C = block_covariance(spec.p, spec.rho, spec.informative)
    if spec.response == "linear":
        X = gen_gaussian(spec.n, C, data_ss)
        y, _ = linear_response(X, coef_seed, spec.sigma_eps, noise_seed=noise_ss)
    else:
        X = gen_uniform_correlated(spec.n, C, data_ss)
        y = friedman_response(X, spec.sigma_eps, noise_ss)
    if spec.task == "classification":
        y = binarize_median(y)
    order = np.random.default_rng(split_ss).permutation(spec.n)
    n_test = max(2, int(round(TEST_FRACTION * spec.n)))
    test, train = np.sort(order[:n_test]), np.sort(order[n_test:])
    breiman_seed = int(perm_ss.generate_state(1, np.uint64)[0] % (2**63))
    return X.take_rows(train), y.take(train), X.take_rows(test), y.take(test), breiman_seed


def run_scenario(
    spec: ScenarioSpec,
    default_metrics: bool = False,
    convention: str = "abs-beta-sd",
    coef_seed=COEF_SEED,
    methods: Sequence[str] = METHOD_NAMES,
) -> ScenarioResult:
    """All repetitions of one scenario. Failures are recorded, not raised."""
    result = ScenarioResult(spec, {m: [] for m in methods})
    diff_metric = "MAE" if default_metrics else "MSE"
    if default_metrics:
        baseline = "mse-drop" if spec.task == "regression" else "accuracy-drop"
    else:
        baseline = default_baseline(spec.task)
    for rep in range(spec.reps):
        try:
            Xtr, ytr, Xte, yte, bseed = generate(spec, rep, coef_seed)
            if spec.task == "classification" and np.unique(ytr.values).size < 2:
                raise ConfigError("training split has a single class")
            model = fit_master(Xtr, ytr, spec.task, spec.master)
            truth = ground_truth_importance(model, Xte, convention)
        except DetviError as exc:
            result.errors.append(f"rep {rep}: setup: {exc}")
            for m in methods:
                result.runs[m].append(None)
            continue
        result.nonzero.append(model.nonzero)
        handle = PredictorHandle.builtin(model)
        for m in methods:
            try:
                if m == "direct-opt":
                    rep_ = direct_scores(handle, Xte, diff_metric, "optimal")
                elif m == "direct-approx":
                    rep_ = direct_scores(handle, Xte, diff_metric, "approx")
                else:
                    B = int(m.split("-")[1])
                    rep_ = breiman_scores(handle, Xte, yte, B, bseed, baseline)
                result.runs[m].append(MethodRun(*_compare(rep_.normalized, truth), rep_.runtime_ms))
            except DegenerateImportanceError as exc:
                result.degenerate.append(f"rep {rep}: {m}: {exc}")
                result.runs[m].append(None)
            except DetviError as exc:
                result.errors.append(f"rep {rep}: {m}: {exc}")
                result.runs[m].append(None)
    return result


def _run_one(args):
    return run_scenario(*args)


def run_grid(
    grid: Sequence[ScenarioSpec],
    default_metrics: bool = False,
    convention: str = "abs-beta-sd",
    workers: int = 1,
    coef_seed=COEF_SEED,
    progress=None,
) -> list:
    """Run every scenario; results come back in grid order whatever ``workers`` is."""
    jobs = [(spec, default_metrics, convention, coef_seed) for spec in grid]
    if workers <= 1:
        out = []
        for job in jobs:
            out.append(run_scenario(*job))
            if progress:
                progress(out[-1])
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = []
        for res in pool.map(_run_one, jobs):
            out.append(res)
            if progress:
                progress(res)
        return out


def aggregate(results: Sequence[ScenarioResult], method: str, metric: str) -> Optional[AggregateStat]:
    pairs = [r.mean_var(method, metric) for r in results]
    pairs = [pv for pv in pairs if np.isfinite(pv[0])]
    if len(pairs) >= 2:
        return combine_variance(pairs)
    if len(pairs) == 1:
        return AggregateStat(pairs[0][0], pairs[0][1], 0.0)
    return None


def summary_tables(results: Sequence[ScenarioResult], methods=METHOD_NAMES) -> dict:
    """Aggregate rows grouped by (task, response), one table per group."""
    tables = {}
    groups = {}
    for r in results:
        groups.setdefault((r.spec.task, r.spec.response), []).append(r)
    for (task, response), members in sorted(groups.items()):
        rows = {}
        for metric in SCORE_METRICS + ("runtime_ms",):
            rows[metric] = {}
            for m in methods:
                agg = aggregate(members, m, metric)
                rows[metric][m] = None if agg is None else agg.as_dict()
        tables[f"{task}/{response}"] = {"scenarios": len(members), "rows": rows}
    return tables


@dataclass
class FlickerResult:
    k: int
    runs: int
    histograms: dict  # method -> Counter of top-k tuples
    seeds: dict  # method -> list of seeds used (None for deterministic methods)

    def distinct(self, method: str) -> int:
        return len(self.histograms[method])


def _method_report(method, handle, X, y, seed, metric=None, baseline=None):
    if method == "direct-opt":
        return direct_scores(handle, X, metric or "MSE", "optimal")
    if method == "direct-approx":
        return direct_scores(handle, X, metric or "MSE", "approx")
    if method.startswith("breiman-"):
        return breiman_scores(handle, X, y, int(method.split("-")[1]), seed, baseline)
    raise ConfigError(f"unknown method {method!r}")


def flicker_analysis(
    methods: Sequence[str],
    handle,
    X,
    y,
    runs: int = 10,
    k: int = 5,
    seed: Optional[int] = None,
    metric: Optional[str] = None,
    baseline: Optional[str] = None,
) -> FlickerResult:
    """Count distinct ordered top-k feature tuples across repeated runs.

    Random methods use seed ``seed + run`` when ``seed`` is given, otherwise a
    fresh seed per run; every seed used is recorded.
    """
    X = as_matrix(X)
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if k > X.p:
        raise ConfigError(f"k={k} exceeds the number of features ({X.p})")
    y = None if y is None else as_target(y, getattr(handle, "task", None))
    hist, seeds = {}, {}
    for m in methods:
        hist[m] = Counter()
        seeds[m] = []
        for r in range(runs):
            s = None
            if m.startswith("breiman-"):
                s = fresh_seed() if seed is None else seed + r
            rep = _method_report(m, handle, X, y, s, metric, baseline)
            hist[m][rep.top_k(k)] += 1
            seeds[m].append(s)
    return FlickerResult(k, runs, hist, seeds)
