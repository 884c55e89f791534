"""Direct importance from one deterministic permutation, and the Breiman baseline.

Direct scores measure how much the model's *predictions* move when a single
column is rearranged; the Breiman baseline measures how much a *loss*
against the target grows under random rearrangements.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ImportanceReport, as_matrix, as_target, clip_and_normalize
from .errors import ConfigError, DegenerateImportanceError
from .permutations import deterministic_permute, random_mapping
from .predictors import as_handle
from .stats import brier_score

DIFF_METRICS = ("MAE", "MSE", "RMSE")
DROP_METRICS = ("mse-drop", "neg-brier-drop", "accuracy-drop")
SCHEME_METHOD = {"optimal": "direct-opt", "approx": "direct-approx"}


def disruption(before: np.ndarray, after: np.ndarray, metric: str) -> float:
    """Average elementwise distance between two n x q prediction matrices."""
    diff = before - after
    if metric == "MAE":
        return float(np.mean(np.abs(diff)))
    if metric == "MSE":
        return float(np.mean(diff * diff))
    if metric == "RMSE":
        return float(np.sqrt(np.mean(diff * diff)))
    raise ConfigError(f"unknown prediction-difference metric {metric!r}; expected one of {DIFF_METRICS}")


def for_each_feature(X: np.ndarray, fn, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn(work, j)`` for every column j.

    ``fn`` may modify its private working copy ``work`` but must restore it
    before returning. Results land by index, so the output does not depend
    on ``workers``.
    """
    p = X.shape[1]
    out = np.empty(p)

    def run(indices):
        work = np.array(X, dtype=float, copy=True)
        for j in indices:
            out[j] = fn(work, int(j))

    if workers <= 1 or p == 1:
        run(range(p))
    else:
        chunks = [c for c in np.array_split(np.arange(p), min(workers, p)) if c.size]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(run, chunks))
    return out


def _normalize_nonneg(raw, what):
    total = float(np.sum(raw))
    if not total > 0.0:
        raise DegenerateImportanceError(f"degenerate importance: every {what} score is zero")
    return raw / total


def direct_raw(handle, X: np.ndarray, metric: str, scheme: str, base=None, workers: int = 1):
    """Raw direct scores and, per feature, the largest absolute prediction change."""
    if metric not in DIFF_METRICS:
        raise ConfigError(f"unknown prediction-difference metric {metric!r}; expected one of {DIFF_METRICS}")
    base = handle.predict(X) if base is None else base
    max_change = np.empty(X.shape[1])

    def score(work, j):
        original = work[:, j].copy()
        work[:, j] = deterministic_permute(original, scheme)
        pred = handle.predict(work)
        work[:, j] = original
        max_change[j] = float(np.max(np.abs(base - pred)))
        return disruption(base, pred, metric)

    return for_each_feature(X, score, workers), max_change


def direct_scores(
    handle,
    X,
    metric: str = "MSE",
    scheme: str = "optimal",
    workers: int = 1,
    prescreen_eps: Optional[float] = None,
) -> ImportanceReport:
    """Direct importance of every feature of ``X`` for a fixed model.

    Each column is rearranged once with the optimal rank shift
    (``scheme="optimal"``) or the index shift (``scheme="approx"``) and the
    raw score is the mean MAE/MSE/RMSE between the n x q prediction matrices
    before and after. No randomness is involved.

    With ``prescreen_eps`` set, features whose largest absolute prediction
    change is at most ``prescreen_eps`` are forced to exactly zero.
    """
    handle = as_handle(handle)
    Xm = as_matrix(X)
    method = SCHEME_METHOD.get(scheme)
    if method is None:
        raise ConfigError(f"unknown scheme {scheme!r}; expected 'optimal' or 'approx'")
    t0 = time.perf_counter()
    raw, max_change = direct_raw(handle, Xm.values, metric, scheme, workers=workers)
    extra = {}
    if prescreen_eps is not None:
        inactive = max_change <= prescreen_eps
        raw[inactive] = 0.0
        extra["inactive"] = [Xm.names[j] for j in np.flatnonzero(inactive)]
    normalized = _normalize_nonneg(raw, "direct")
    runtime = (time.perf_counter() - t0) * 1e3
    return ImportanceReport(method, metric, Xm.names, raw, normalized, runtime_ms=runtime, extra=extra)


def prescreen(handle, X, epsilon: float = 0.0, scheme: str = "optimal") -> np.ndarray:
    """Boolean mask, True for features whose permutation changes some prediction by more than ``epsilon``."""
    if epsilon < 0:
        raise ConfigError("epsilon must be nonnegative")
    handle = as_handle(handle)
    _, max_change = direct_raw(handle, as_matrix(X).values, "MAE", scheme)
    return max_change > epsilon


def default_baseline(task: str) -> str:
    return "mse-drop" if task == "regression" else "neg-brier-drop"


def _loss_fn(baseline: str, y):
    yv = y.values
    if baseline == "mse-drop":
        if y.task != "regression":
            raise ConfigError("mse-drop needs a regression target")
        return lambda pred: float(np.mean((yv - pred[:, 0]) ** 2))
    if y.task != "classification":
        raise ConfigError(f"{baseline} needs a classification target")
    labels = y.as_int()
    if baseline == "neg-brier-drop":
        return lambda pred: brier_score(pred, labels)
    if baseline == "accuracy-drop":

        def error_rate(pred):
            guess = pred.argmax(axis=1) if pred.shape[1] > 1 else (pred[:, 0] > 0.5).astype(int)
            return float(np.mean(guess != labels))

        return error_rate
    raise ConfigError(f"unknown baseline metric {baseline!r}; expected one of {DROP_METRICS}")


def fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))


def breiman_drops(handle, X: np.ndarray, loss, B: int, seed: int, workers: int = 1) -> np.ndarray:
    """``p x B`` matrix of loss increases, one random permutation per cell."""
    base_loss = loss(handle.predict(X))
    n, p = X.shape
    drops = np.empty((p, B))

    def score(work, j):
        original = work[:, j].copy()
        for b in range(B):
            work[:, j] = original[random_mapping(n, seed, j, b)]
            drops[j, b] = loss(handle.predict(work)) - base_loss
        work[:, j] = original
        return 0.0

    for_each_feature(X, score, workers)
    return drops


def breiman_scores(
    handle,
    X,
    y,
    B: int = 10,
    seed: Optional[int] = 0,
    baseline_metric: Optional[str] = None,
    workers: int = 1,
) -> ImportanceReport:
    """Classical permutation importance with negative effects clipped to zero.

    For feature j and repetition b the column is shuffled with the PCG64
    stream keyed by ``(seed, j, b)``; the raw effect is the mean increase of
    the loss over the B repetitions. ``seed=None`` draws a fresh seed, which
    is recorded in the report.
    """
    if B < 1:
        raise ConfigError("B must be at least 1")
    handle = as_handle(handle)
    Xm = as_matrix(X)
    y = as_target(y, handle.task)
    if y.n != Xm.n:
        raise ConfigError("target length does not match the matrix")
    baseline = baseline_metric or default_baseline(y.task)
    loss = _loss_fn(baseline, y)
    seed = fresh_seed() if seed is None else int(seed)
    t0 = time.perf_counter()
    drops = breiman_drops(handle, Xm.values, loss, B, seed, workers)
    effect = drops.mean(axis=1)
    normalized = clip_and_normalize(effect)
    runtime = (time.perf_counter() - t0) * 1e3
    return ImportanceReport(
        "breiman",
        baseline,
        Xm.names,
        np.maximum(effect, 0.0),
        normalized,
        seeds=[seed],
        B=B,
        runtime_ms=runtime,
        extra={"unclipped": [float(v) for v in effect]},
    )


@dataclass(frozen=True)
class DominanceCheck:
    """Whether one deterministic permutation looks preferable to B random ones.

    ``lhs`` is the squared distance between the deterministic and Monte Carlo
    raw score vectors. ``rhs_literal`` divides the squared norm of the
    per-feature variance vector by B; ``rhs_consistent`` divides the sum of
    variances by B, which has the same units as ``lhs``.
    """

    deterministic: np.ndarray
    monte_carlo: np.ndarray
    variances: np.ndarray
    B: int
    lhs: float
    rhs_literal: float
    rhs_consistent: float

    @property
    def verdict_literal(self) -> bool:
        return self.lhs < self.rhs_literal

    @property
    def verdict_consistent(self) -> bool:
        return self.lhs < self.rhs_consistent

    def as_dict(self):
        return {
            "B": self.B,
            "lhs": self.lhs,
            "rhs_literal": self.rhs_literal,
            "rhs_consistent": self.rhs_consistent,
            "verdict_literal": self.verdict_literal,
            "verdict_consistent": self.verdict_consistent,
            "deterministic": self.deterministic.tolist(),
            "monte_carlo": self.monte_carlo.tolist(),
            "variances": self.variances.tolist(),
        }


def dominance_check(handle, X, metric: str = "MSE", B: int = 10, seed: int = 0, scheme: str = "optimal") -> DominanceCheck:
    """Compare the deterministic estimate with the mean of B random permutations.

    Both sides use the same prediction-difference functional; the variances
    are the per-feature sample variances (ddof=1) over the B draws.
    """
    if B < 2:
        raise ConfigError("dominance_check needs B >= 2")
    handle = as_handle(handle)
    X = as_matrix(X).values
    base = handle.predict(X)
    det, _ = direct_raw(handle, X, metric, scheme, base=base)
    n, p = X.shape
    g = np.empty((p, B))

    def score(work, j):
        original = work[:, j].copy()
        for b in range(B):
            work[:, j] = original[random_mapping(n, seed, j, b)]
            g[j, b] = disruption(base, handle.predict(work), metric)
        work[:, j] = original
        return 0.0

    for_each_feature(X, score)
    mc = g.mean(axis=1)
    var = g.var(axis=1, ddof=1)
    return DominanceCheck(
        det,
        mc,
        var,
        B,
        float(np.sum((det - mc) ** 2)),
        float(np.sum(var**2) / B),
        float(np.sum(var) / B),
    )
