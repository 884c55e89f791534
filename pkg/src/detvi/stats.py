"""Small numerical primitives shared across the package."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import ConfigError


def normal_cdf(z):
    """Standard normal CDF, elementwise. Accepts scalars or arrays."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def empirical_quantile(values, level: float) -> float:
    """Inverse-CDF quantile ``inf{x : F(x) >= level}``.

    Always returns one of the observed values.
    """
    arr = np.sort(np.asarray(values, dtype=float).ravel())
    n = arr.size
    if n == 0:
        raise ConfigError("empirical_quantile needs a nonempty input")
    if not 0.0 < level <= 1.0:
        raise ConfigError(f"quantile level must lie in (0, 1], got {level}")
    k = min(n, int(np.ceil(level * n)))
    # guard against level*n landing just above an integer
    while k > 1 and (k - 1) / n >= level:
        k -= 1
    return float(arr[max(k, 1) - 1])


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    within_var_mean: float
    between_var: float

    @property
    def combined_se(self) -> float:
        return float(np.sqrt(self.within_var_mean + self.between_var))

    @property
    def band(self) -> tuple[float, float]:
        return (self.mean - 2 * self.combined_se, self.mean + 2 * self.combined_se)

    def as_dict(self):
        lo, hi = self.band
        return {
            "mean": self.mean,
            "within_var_mean": self.within_var_mean,
            "between_var": self.between_var,
            "combined_se": self.combined_se,
            "band_lo": lo,
            "band_hi": hi,
        }


def combine_variance(per_scenario) -> AggregateStat:
    """Pool ``(mean, within-variance)`` pairs across scenarios.

    The combined variance is the average within-scenario variance plus the
    sample (ddof=1) variance of the scenario means.
    """
    pairs = np.asarray(list(per_scenario), dtype=float).reshape(-1, 2)
    if pairs.shape[0] < 2:
        raise ConfigError("combine_variance needs at least 2 scenarios")
    means, variances = pairs[:, 0], pairs[:, 1]
    return AggregateStat(
        mean=float(np.mean(means)),
        within_var_mean=float(np.mean(variances)),
        # shifting by the first mean keeps identical scenarios at exactly 0
        between_var=float(np.var(means - means[0], ddof=1)),
    )


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ConfigError("pearson needs two equal-length vectors of length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0.0:
        raise ConfigError("correlation undefined for a constant input")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def spearman(a, b) -> float:
    return pearson(rankdata(a), rankdata(b))


def spearman_matrix(X) -> np.ndarray:
    """Pairwise Spearman correlation with midranks for ties.

    Constant columns get zero off-diagonal entries (with a warning).
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 3:
        raise ConfigError("spearman_matrix needs at least 3 rows")
    ranks = rankdata(X, axis=0)
    centered = ranks - ranks.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    constant = norms == 0.0
    if constant.any():
        warnings.warn(
            f"constant column(s) {np.flatnonzero(constant).tolist()}: "
            "rank correlation undefined, set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        norms = np.where(constant, 1.0, norms)
    unit = centered / norms
    rho = unit.T @ unit
    rho = np.clip((rho + rho.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return rho


def brier_score(proba, labels) -> float:
    """Mean squared error between class probabilities and one-hot labels.

    Averages over all ``n * C`` entries.
    """
    proba = np.asarray(proba, dtype=float)
    labels = np.asarray(labels).astype(int)
    onehot = np.zeros_like(proba)
    onehot[np.arange(proba.shape[0]), labels] = 1.0
    return float(np.mean((proba - onehot) ** 2))
