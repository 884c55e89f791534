"""Data containers, CSV ingestion, fold plans and score normalization."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateImportanceError

NORM_TOL = 1e-9

FEATURE_KINDS = ("numeric", "binary", "ordinal")
METHODS = ("direct-opt", "direct-approx", "breiman")
METRICS = ("MAE", "MSE", "RMSE", "neg-brier-drop", "mse-drop", "accuracy-drop")


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str = "numeric"
    # category labels in code order, for encoded columns
    categories: tuple = ()


class DataMatrix:
    """An n x p matrix of finite reals with per-feature metadata.

    The underlying array is copied and marked read-only.
    """

    def __init__(self, values, feature_meta: Optional[Sequence] = None):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ConfigError("DataMatrix values must be two-dimensional")
        n, p = arr.shape
        if p < 1:
            raise ConfigError("DataMatrix needs at least one feature")
        if n < 2:
            raise ConfigError("DataMatrix needs at least two rows")
        if not np.all(np.isfinite(arr)):
            raise DataError("non-finite", "DataMatrix entries must be finite")
        if feature_meta is None:
            feature_meta = [FeatureMeta(f"x{j + 1}") for j in range(p)]
        meta = [m if isinstance(m, FeatureMeta) else FeatureMeta(str(m)) for m in feature_meta]
        if len(meta) != p:
            raise ConfigError(f"got {len(meta)} feature names for {p} columns")
        names = [m.name for m in meta]
        if len(set(names)) != p:
            raise ConfigError("feature names must be unique")
        for m in meta:
            if m.kind not in FEATURE_KINDS:
                raise ConfigError(f"unknown feature kind {m.kind!r}")
        arr.setflags(write=False)
        self.values = arr
        self.feature_meta = tuple(meta)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.feature_meta]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown feature {name!r}") from None

    def take_rows(self, rows) -> "DataMatrix":
        return DataMatrix(self.values[np.asarray(rows)], self.feature_meta)

    def __repr__(self):
        return f"DataMatrix(n={self.n}, p={self.p})"


def as_matrix(X) -> DataMatrix:
    return X if isinstance(X, DataMatrix) else DataMatrix(X)


@dataclass(frozen=True)
class TargetVector:
    values: np.ndarray
    task: str = "regression"
    n_classes: Optional[int] = None
    # original labels in code order (classification only)
    labels: tuple = ()

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 1:
            raise ConfigError("target must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite", "target contains non-finite values")
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "classification":
            if np.any(vals != np.round(vals)) or vals.min() < 0:
                raise ConfigError("class labels must be nonnegative integers")
            classes = int(vals.max()) + 1
            n_classes = self.n_classes or classes
            if classes > n_classes:
                raise ConfigError("class label exceeds n_classes")
            object.__setattr__(self, "n_classes", n_classes)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def as_int(self) -> np.ndarray:
        return self.values.astype(int)

    def take(self, rows) -> "TargetVector":
        return TargetVector(self.values[np.asarray(rows)], self.task, self.n_classes, self.labels)


def as_target(y, task: Optional[str] = None) -> TargetVector:
    if isinstance(y, TargetVector):
        return y
    y = np.asarray(y, dtype=float)
    if task is None:
        uniq = np.unique(y)
        task = "classification" if uniq.size <= 2 and np.all(np.isin(uniq, (0.0, 1.0))) else "regression"
    return TargetVector(y, task)


@dataclass
class ImportanceReport:
    """Per-feature scores from one importance run.

    ``normalized`` always sums to one. When ``systemic`` is set, ``direct`` and
    ``indirect`` are set too and ``systemic == direct + indirect``.
    """

    method: str
    metric: str
    features: list
    raw: np.ndarray
    normalized: np.ndarray
    systemic: Optional[np.ndarray] = None
    direct: Optional[np.ndarray] = None
    indirect: Optional[np.ndarray] = None
    seeds: Optional[list] = None
    B: Optional[int] = None
    runtime_ms: float = 0.0
    timestamp: float = field(default_factory=time.time)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        self.features = list(self.features)
        p = len(self.features)
        self.raw = np.asarray(self.raw, dtype=float)
        self.normalized = np.asarray(self.normalized, dtype=float)
        if self.raw.shape != (p,) or self.normalized.shape != (p,):
            raise ConfigError("score vectors must have one entry per feature")
        if self.method != "breiman" and np.any(self.raw < 0):
            raise ConfigError("raw direct scores must be nonnegative")
        _check_simplex(self.normalized, "normalized")
        parts = (self.systemic, self.direct, self.indirect)
        if any(v is not None for v in parts):
            if any(v is None for v in parts):
                raise ConfigError("systemic, direct and indirect must be given together")
            self.systemic, self.direct, self.indirect = (np.asarray(v, dtype=float) for v in parts)
            _check_simplex(self.systemic, "systemic")
            _check_simplex(self.direct, "direct")
            if np.max(np.abs(self.systemic - self.direct - self.indirect)) > NORM_TOL:
                raise ConfigError("systemic != direct + indirect")
            if abs(float(np.sum(self.indirect))) > NORM_TOL:
                raise ConfigError("indirect scores must sum to zero")

    @property
    def p(self) -> int:
        return len(self.features)

    def top_k(self, k: int) -> tuple:
        """Feature indices of the k largest normalized scores (ties by index)."""
        order = np.lexsort((np.arange(self.p), -self.normalized))
        return tuple(int(i) for i in order[:k])

    def as_dict(self, timing: bool = True) -> dict:
        """Plain-data view; ``timing=False`` drops the run-dependent fields."""

        def lst(v):
            return None if v is None else [float(x) for x in v]

        return {
            "method": self.method,
            "metric": self.metric,
            "features": self.features,
            "raw": lst(self.raw),
            "normalized": lst(self.normalized),
            "systemic": lst(self.systemic),
            "direct": lst(self.direct),
            "indirect": lst(self.indirect),
            "seeds": self.seeds,
            "B": self.B,
            **({"runtime_ms": self.runtime_ms, "timestamp": self.timestamp} if timing else {}),
            **({"extra": self.extra} if self.extra else {}),
        }


def _check_simplex(v, label):
    if np.any(v < 0):
        raise ConfigError(f"{label} scores must be nonnegative")
    if abs(float(np.sum(v)) - 1.0) > NORM_TOL:
        raise ConfigError(f"{label} scores must sum to 1")


def clip_and_normalize(raw) -> np.ndarray:
    """Zero out negative entries, then rescale to sum to one."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 1:
        raise ConfigError("clip_and_normalize needs a nonempty vector")
    clipped = np.maximum(raw, 0.0)
    total = clipped.sum()
    if not total > 0.0:
        raise DegenerateImportanceError("degenerate importance: no positive score to normalize by")
    return clipped / total


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    @property
    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold(n: int, k: int, seed: int) -> FoldPlan:
    """Balanced, seeded assignment of ``n`` rows to ``k`` folds."""
    if k < 2 or k > n:
        raise ConfigError(f"kfold needs 2 <= k <= n, got k={k}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k, assignments, seed)


def _parse_float(text):
    try:
        return float(text)
    except ValueError:
        return None


def load_csv(path, target: str, encode: str = "lexicographic", task: Optional[str] = None):
    """Read a headed CSV into ``(DataMatrix, TargetVector)``.

    Columns that do not parse as numbers are ordinal-encoded, categories
    ordered lexicographically (``encode="lexicographic"``) or by first
    appearance (``encode="appearance"``). ``task`` is inferred from the
    target when omitted: integer-valued targets with at most two distinct
    values, or non-numeric targets, are treated as classification.
    """
    if encode not in ("lexicographic", "appearance"):
        raise ConfigError(f"unknown encoding policy {encode!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError("missing-file", f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty", f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    if target not in header:
        raise DataError("missing-target", f"{path}: target column {target!r} not found")
    if not body:
        raise DataError("empty", f"{path}: no data rows")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ConfigError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(header)}")

    columns, meta = [], []
    y_col = None
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in body]
        for i, c in enumerate(cells):
            if c == "" or c.upper() in ("NA", "NAN", "NULL"):
                raise DataError("non-finite", f"{path}: missing value in column {name!r}, row {i + 2}")
        numbers = [_parse_float(c) for c in cells]
        if all(v is not None for v in numbers):
            vals = np.array(numbers)
            if not np.all(np.isfinite(vals)):
                raise DataError("non-finite", f"{path}: non-finite value in column {name!r}")
            uniq = np.unique(vals)
            kind = "binary" if uniq.size <= 2 and np.all(np.isin(uniq, (0.0, 1.0))) else "numeric"
            cats = ()
        else:
            if encode == "lexicographic":
                cats = tuple(sorted(set(cells)))
            else:
                cats = tuple(dict.fromkeys(cells))
            code = {c: i for i, c in enumerate(cats)}
            vals = np.array([code[c] for c in cells], dtype=float)
            kind = "binary" if len(cats) <= 2 else "ordinal"
        if name == target:
            y_col = (vals, cats)
        else:
            columns.append(vals)
            meta.append(FeatureMeta(name, kind, cats))

    if not columns:
        raise DataError("empty", f"{path}: no feature columns besides the target")
    X = DataMatrix(np.column_stack(columns), meta)
    y_vals, y_cats = y_col
    if task is None:
        integral = np.all(y_vals == np.round(y_vals))
        task = "classification" if y_cats or (integral and np.unique(y_vals).size <= 2) else "regression"
    if task == "classification":
        if y_cats:
            labels = y_cats
            codes = y_vals
        else:
            uniq = np.unique(y_vals)
            labels = tuple(_fmt_label(u) for u in uniq)
            codes = np.searchsorted(uniq, y_vals).astype(float)
        y = TargetVector(codes, "classification", len(labels), labels)
    else:
        if y_cats:
            raise ConfigError(f"{path}: regression target {target!r} is not numeric")
        y = TargetVector(y_vals, "regression")
    return X, y


def _fmt_label(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def bundled_path(name: str) -> Path:
    """Path of a dataset shipped with the package (``hmda`` or ``german_credit``)."""
    here = Path(__file__).parent / "datasets" / f"{name}.csv"
    if not here.is_file():
        raise DataError("missing-file", f"no bundled dataset named {name!r}")
    return here


BUNDLED_TARGETS = {"hmda": "dir", "german_credit": "class"}


def load_bundled(name: str, encode: str = "lexicographic"):
    return load_csv(bundled_path(name), BUNDLED_TARGETS[name], encode)
