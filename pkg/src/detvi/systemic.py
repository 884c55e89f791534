"""Systemic importance: direct importance with correlation-driven propagation.

When feature j is rearranged, every neighbour k whose rank correlation with
j exceeds a calibrated threshold receives ``rho_kj * (x_j' - x_j)`` on top
of its original values. The share of prediction disruption obtained this way
is the systemic score; subtracting the direct score leaves the indirect part.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import ImportanceReport, as_matrix
from .direct import SCHEME_METHOD, _normalize_nonneg, direct_raw, disruption, for_each_feature
from .errors import ConfigError
from .permutations import deterministic_permute
from .predictors import as_handle
from .stats import empirical_quantile, spearman_matrix

DEFAULT_ALPHA = 0.01
DEFAULT_CALIBRATION_SEED = 0


@dataclass(frozen=True)
class CorrelationGraph:
    matrix: np.ndarray
    tau: float
    alpha: Optional[float] = None
    seed: Optional[int] = None
    names: tuple = ()
    # pooled |rho| values of the permuted null sample
    null_sample: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("correlation matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12) or not np.allclose(np.diag(m), 1.0):
            raise ConfigError("correlation matrix must be symmetric with unit diagonal")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j + 1}" for j in range(m.shape[0])))

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def neighbours(self, j: int) -> np.ndarray:
        mask = np.abs(self.matrix[:, j]) > self.tau
        mask[j] = False
        return np.flatnonzero(mask)

    @property
    def edges(self) -> list:
        p = self.p
        return [
            (i, j, float(self.matrix[i, j]))
            for i in range(p)
            for j in range(i + 1, p)
            if abs(self.matrix[i, j]) > self.tau
        ]

    def with_tau(self, tau: float) -> "CorrelationGraph":
        return CorrelationGraph(self.matrix, tau, self.alpha, self.seed, self.names, self.null_sample)


def null_correlations(X, seed: int = DEFAULT_CALIBRATION_SEED) -> np.ndarray:
    """|Spearman| over all column pairs after permuting each column independently."""
    X = as_matrix(X).values
    rng = np.random.default_rng(seed)
    shuffled = np.column_stack([X[rng.permutation(X.shape[0]), j] for j in range(X.shape[1])])
    rho = spearman_matrix(shuffled)
    return np.abs(rho[np.triu_indices(X.shape[1], k=1)])


def calibrate_threshold(X_train, alpha: float = DEFAULT_ALPHA, seed: int = DEFAULT_CALIBRATION_SEED) -> CorrelationGraph:
    """Learn the propagation threshold from a permutation null.

    ``tau`` is the inverse-CDF ``1 - alpha`` quantile of the pooled absolute
    pairwise correlations of a column-wise shuffled copy of ``X_train``, so it
    is always one of the null values. The returned graph carries the
    training-set Spearman matrix.
    """
    Xm = as_matrix(X_train)
    if Xm.p < 2:
        raise ConfigError("threshold calibration needs at least two features")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    null = null_correlations(Xm, seed)
    tau = empirical_quantile(null, 1.0 - alpha)
    return CorrelationGraph(spearman_matrix(Xm.values), tau, alpha, seed, tuple(Xm.names), null)


def propagate(work: np.ndarray, original: np.ndarray, j: int, permuted: np.ndarray, graph: CorrelationGraph) -> np.ndarray:
    """Write the perturbed column j and its propagated neighbours into ``work``.

    Returns the touched column indices (j first).
    """
    work[:, j] = permuted
    touched = [j]
    neigh = graph.neighbours(j)
    if neigh.size:
        delta = permuted - original[:, j]
        for k in neigh:
            work[:, k] = original[:, k] + graph.matrix[k, j] * delta
            touched.append(int(k))
    return np.asarray(touched)


def systemic_raw(handle, X: np.ndarray, metric: str, scheme: str, graph: CorrelationGraph, base=None, workers: int = 1):
    if graph.p != X.shape[1]:
        raise ConfigError(f"graph has {graph.p} features, matrix has {X.shape[1]}")
    base = handle.predict(X) if base is None else base

    def score(work, j):
        touched = propagate(work, X, j, deterministic_permute(X[:, j], scheme), graph)
        pred = handle.predict(work)
        work[:, touched] = X[:, touched]
        return disruption(base, pred, metric)

    return for_each_feature(X, score, workers)


def systemic_scores(
    handle,
    X,
    graph: CorrelationGraph,
    metric: str = "MSE",
    scheme: str = "optimal",
    workers: int = 1,
) -> ImportanceReport:
    """Systemic, direct and indirect importance on the evaluation matrix ``X``.

    ``systemic`` and ``direct`` are each normalized by their own raw total;
    ``indirect = systemic - direct`` and may be negative.
    """
    handle = as_handle(handle)
    Xm = as_matrix(X)
    method = SCHEME_METHOD.get(scheme)
    if method is None:
        raise ConfigError(f"unknown scheme {scheme!r}; expected 'optimal' or 'approx'")
    t0 = time.perf_counter()
    Xv = Xm.values
    base = handle.predict(Xv)
    d_raw, _ = direct_raw(handle, Xv, metric, scheme, base=base, workers=workers)
    s_raw = systemic_raw(handle, Xv, metric, scheme, graph, base=base, workers=workers)
    d = _normalize_nonneg(d_raw, "direct")
    s = _normalize_nonneg(s_raw, "systemic")
    i = s - d
    runtime = (time.perf_counter() - t0) * 1e3
    extra = {"tau": graph.tau, "alpha": graph.alpha, "calibration_seed": graph.seed, "systemic_raw": s_raw.tolist()}
    return ImportanceReport(
        method, metric, Xm.names, d_raw, d, systemic=s, direct=d, indirect=i, runtime_ms=runtime, extra=extra
    )


@dataclass(frozen=True)
class AuditResult:
    feature: str
    systemic: float
    direct: float
    indirect: float
    proxies: list
    proxy_influenced_share: float
    share_basis: str = "direct"

    def __post_init__(self):
        if abs(self.systemic - self.direct - self.indirect) > 1e-9:
            raise ConfigError("systemic != direct + indirect")

    def as_dict(self):
        return {
            "feature": self.feature,
            "systemic": self.systemic,
            "direct": self.direct,
            "indirect": self.indirect,
            "proxies": [{"feature": f, "rho": r} for f, r in self.proxies],
            "proxy_influenced_share": self.proxy_influenced_share,
            "share_basis": self.share_basis,
        }


def audit_feature(
    handle,
    X,
    graph: CorrelationGraph,
    feature: str,
    ground_truth=None,
    metric: str = "MSE",
    scheme: str = "optimal",
    report: Optional[ImportanceReport] = None,
) -> AuditResult:
    """Systemic audit of one (typically protected) feature.

    Proxies are the features whose |rho| with ``feature`` exceeds ``tau``.
    ``proxy_influenced_share`` sums the ground-truth scores (or the direct
    scores when none are given) over the proxies and the feature itself.
    """
    Xm = as_matrix(X)
    if feature not in Xm.names:
        raise ConfigError(f"unknown feature {feature!r}")
    j = Xm.index_of(feature)
    if report is None:
        report = systemic_scores(handle, Xm, graph, metric, scheme)
    proxies = [(Xm.names[k], float(graph.matrix[k, j])) for k in graph.neighbours(j)]
    basis = np.asarray(ground_truth, dtype=float) if ground_truth is not None else report.direct
    members = [j] + [int(k) for k in graph.neighbours(j)]
    share = float(np.clip(np.sum(basis[members]), 0.0, 1.0))
    return AuditResult(
        feature,
        float(report.systemic[j]),
        float(report.direct[j]),
        float(report.systemic[j] - report.direct[j]),
        proxies,
        share,
        "ground-truth" if ground_truth is not None else "direct",
    )


def write_heatmap_csv(path, matrix, names) -> None:
    """Correlation matrix with a feature-name header row and first column."""
    lines = ["," + ",".join(names)]
    for name, row in zip(names, np.asarray(matrix)):
        lines.append(name + "," + ",".join(format(float(v), ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
