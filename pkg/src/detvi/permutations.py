"""Permutation schemes: optimal rank shift, index shift and seeded random.

The optimal scheme shifts every rank by ``n // 2`` around the n-cycle, which
makes each circular displacement equal to the largest value any permutation
can guarantee for all positions at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError

KINDS = ("optimal-rank-shift", "index-shift", "random")


@dataclass(frozen=True)
class Permutation:
    mapping: tuple
    kind: str
    seed: Optional[int] = None

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        n = len(mapping)
        if sorted(mapping) != list(range(n)):
            raise ConfigError("mapping is not a bijection on {0..n-1}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown permutation kind {self.kind!r}")
        object.__setattr__(self, "mapping", mapping)

    @property
    def n(self) -> int:
        return len(self.mapping)


def _check_n(n):
    if n < 2:
        raise ConfigError(f"permutations need n >= 2, got {n}")


def cyclic_shift(n: int) -> Permutation:
    _check_n(n)
    k = n // 2
    return Permutation(tuple((j + k) % n for j in range(n)), "optimal-rank-shift")


def circular_displacement(a: int, b: int, n: int) -> int:
    if not (0 <= a < n and 0 <= b < n):
        raise ConfigError(f"indices ({a}, {b}) out of range for n={n}")
    t = abs(a - b)
    return min(t, n - t)


def min_displacement(perm, n: Optional[int] = None) -> int:
    mapping = perm.mapping if isinstance(perm, Permutation) else tuple(perm)
    n = len(mapping) if n is None else n
    return min(circular_displacement(j, mapping[j], n) for j in range(n))


def rank_order(column) -> np.ndarray:
    """Row indices sorted by value, ties broken by original position."""
    return np.argsort(np.asarray(column), kind="stable")


def apply_rank_shift(column) -> np.ndarray:
    """Replace each value by the value ``n // 2`` ranks further along (mod n)."""
    col = np.asarray(column)
    n = col.shape[0]
    _check_n(n)
    order = rank_order(col)
    out = np.empty_like(col)
    # the row holding rank r receives the value at rank (r + n//2) mod n
    out[order] = col[np.roll(order, -(n // 2))]
    return out


def apply_index_shift(column) -> np.ndarray:
    """``out[i] = column[(i + n // 2) mod n]``. Linear time, no sorting."""
    col = np.asarray(column)
    n = col.shape[0]
    _check_n(n)
    return np.roll(col, -(n // 2))


def feature_rng(seed: int, feature: int = 0, repetition: int = 0) -> np.random.Generator:
    """PCG64 stream keyed by ``(seed, feature, repetition)``.

    Keying by position rather than draw order keeps results independent of
    how work is scheduled.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(feature), int(repetition)])))


def random_mapping(n: int, seed: int, feature: int = 0, repetition: int = 0) -> np.ndarray:
    _check_n(n)
    return feature_rng(seed, feature, repetition).permutation(n)


def apply_random(column, seed: int, feature: int = 0, repetition: int = 0) -> np.ndarray:
    """Uniform random rearrangement (Fisher-Yates), deterministic per key."""
    col = np.asarray(column)
    return col[random_mapping(col.shape[0], seed, feature, repetition)]


SCHEMES = {"optimal": apply_rank_shift, "approx": apply_index_shift}


def deterministic_permute(column, scheme: str) -> np.ndarray:
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ConfigError(f"unknown scheme {scheme!r}; expected 'optimal' or 'approx'") from None
    return fn(column)
