"""Built-in linear and logistic master models plus the predictor handle.

Every importance routine talks to a model only through
:class:`PredictorHandle`, which wraps either a fitted :class:`LinearModel`,
an arbitrary Python callable, or an external process speaking the line
protocol implemented in :class:`ExternalPredictor`.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .data import DataMatrix, as_matrix, as_target
from .errors import ConfigError, ConvergenceError, DegenerateImportanceError, PredictorError

PROTOCOL_VERSION = "v1"
OLS_JITTER = 1e-10
LASSO_MAX_SWEEPS = 10_000
LASSO_TOL = 1e-8


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float = 0.0
    link: str = "identity"
    penalty: str = "none"
    lam: float = 0.0
    flags: tuple = ()
    # objective value after every solver sweep, for penalized fits
    history: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float, copy=True).ravel()
        if not np.all(np.isfinite(coef)) or not np.isfinite(self.intercept):
            raise ConfigError("model parameters must be finite")
        if self.link not in ("identity", "logit"):
            raise ConfigError(f"unknown link {self.link!r}")
        if self.penalty not in ("none", "l1"):
            raise ConfigError(f"unknown penalty {self.penalty!r}")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def p(self) -> int:
        return self.coefficients.size

    @property
    def q(self) -> int:
        return 1 if self.link == "identity" else 2

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def predict(self, X) -> np.ndarray:
        X = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
        eta = X @ self.coefficients + self.intercept
        if self.link == "identity":
            return eta[:, None]
        prob = expit(eta)
        return np.column_stack((1.0 - prob, prob))

    def to_dict(self) -> dict:
        return {
            "type": "linear-model",
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": self.intercept,
            "link": self.link,
            "penalty": self.penalty,
            "lambda": self.lam,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            np.array(d["coefficients"], dtype=float),
            d.get("intercept", 0.0),
            d.get("link", "identity"),
            d.get("penalty", "none"),
            d.get("lambda", 0.0),
            tuple(d.get("flags", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _standardize(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    active = sd > 0
    Z = np.zeros_like(X)
    Z[:, active] = (X[:, active] - mean[active]) / sd[active]
    return Z, mean, np.where(active, sd, 1.0), active


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def cd_quadratic(G, c, lam, b0=None, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS):
    """Coordinate descent for ``0.5 b'Gb - c'b + sum(lam * |b|)``.

    ``lam`` may be a vector (zero entries are unpenalized). Returns the
    solution, the number of sweeps and the objective after each sweep.
    Raises :class:`ConvergenceError` carrying the last iterate when the
    sweep cap is reached.
    """
    p = c.size
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (p,))
    b = np.zeros(p) if b0 is None else np.array(b0, dtype=float)
    Gb = G @ b
    diag = np.diag(G).copy()
    history = []
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if diag[j] <= 0.0:
                continue
            old = b[j]
            r = c[j] - Gb[j] + diag[j] * old
            new = _soft(r, lam[j]) / diag[j]
            if new != old:
                delta = new - old
                Gb += G[:, j] * delta
                b[j] = new
                max_delta = max(max_delta, abs(delta))
        history.append(0.5 * b @ Gb - c @ b + float(np.sum(lam * np.abs(b))))
        if max_delta < tol:
            return b, sweep, history
    raise ConvergenceError(f"coordinate descent did not converge in {max_sweeps} sweeps", last=b)


def _ridge_solve(A, y, jitter):
    H = A.T @ A
    scale = max(float(np.mean(np.diag(H))), 1.0)
    return np.linalg.solve(H + jitter * scale * np.eye(H.shape[0]), A.T @ y)


def fit_ols(X, y) -> LinearModel:
    """Least squares via a QR factorization of the centered design.

    Rank-deficient designs fall back to a ridge solve with a 1e-10 relative
    jitter and carry the ``rank-deficient`` flag.
    """
    X = as_matrix(X).values
    y = as_target(y, "regression").values
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    flags = ()
    Q, R = np.linalg.qr(Xc)
    d = np.abs(np.diag(R))
    if d.size and d.min() > 1e-10 * max(d.max(), 1.0) and X.shape[0] > X.shape[1]:
        beta = np.linalg.solve(R, Q.T @ yc)
    else:
        warnings.warn("rank-deficient design, solving with ridge jitter", RuntimeWarning, stacklevel=2)
        beta = _ridge_solve(Xc, yc, OLS_JITTER)
        flags = ("rank-deficient",)
    return LinearModel(beta, ym - xm @ beta, "identity", "none", 0.0, flags)


def lasso_lambda_max(X, y) -> float:
    Z, *_ = _standardize(as_matrix(X).values)
    yv = as_target(y, "regression").values
    return float(np.max(np.abs(Z.T @ (yv - yv.mean()))) / Z.shape[0])


def fit_lasso(X, y, lam: float, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS) -> LinearModel:
    """L1-penalized least squares by coordinate descent.

    Minimizes ``(1/2n)||y - ybar - Zb||^2 + lam * ||b||_1`` over columns
    standardized to zero mean and unit (population) variance; coefficients
    are mapped back to the original scale.
    """
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    X = as_matrix(X).values
    y = as_target(y, "regression").values
    n = X.shape[0]
    Z, mean, sd, active = _standardize(X)
    yc = y - y.mean()
    G = Z.T @ Z / n
    c = Z.T @ yc / n
    b, _, history = cd_quadratic(G, c, lam, tol=tol, max_sweeps=max_sweeps)
    b[~active] = 0.0
    beta = b / sd
    return LinearModel(beta, y.mean() - mean @ beta, "identity", "l1", lam, (), tuple(history))


def class_weights(labels, balance: bool) -> np.ndarray:
    labels = np.asarray(labels).astype(int)
    if not balance:
        return np.ones(labels.size)
    counts = np.bincount(labels, minlength=2).astype(float)
    return labels.size / (counts.size * counts[labels])


def _logistic_objective(A, yv, w, theta, lam_vec, ridge):
    eta = A @ theta
    # log(1 + e^eta) - y*eta, computed stably
    loss = np.logaddexp(0.0, eta) - yv * eta
    return float(w @ loss / w.sum() + np.sum(lam_vec * np.abs(theta)) + 0.5 * ridge * theta[1:] @ theta[1:])


def _logistic_lambda_max(Z, yv, w):
    p0 = (w @ yv) / w.sum()
    return float(np.max(np.abs(Z.T @ (w * (yv - p0)))) / w.sum())


def _fit_logistic_std(Z, yv, w, lam, ridge, max_iter, tol):
    n, p = Z.shape
    A = np.column_stack((np.ones(n), Z))
    lam_vec = np.concatenate(([0.0], np.full(p, lam)))
    ridge_vec = np.concatenate(([0.0], np.full(p, ridge)))
    theta = np.zeros(p + 1)
    p0 = np.clip((w @ yv) / w.sum(), 1e-12, 1 - 1e-12)
    theta[0] = np.log(p0 / (1 - p0))
    obj = _logistic_objective(A, yv, w, theta, lam_vec, ridge)
    history = [obj]
    wsum = w.sum()
    for it in range(1, max_iter + 1):
        prob = expit(A @ theta)
        v = np.maximum(w * prob * (1 - prob), 1e-12 * w)
        grad = A.T @ (w * (prob - yv)) / wsum + ridge_vec * theta
        H = (A.T * v) @ A / wsum + np.diag(ridge_vec)
        if lam == 0.0:
            try:
                step = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, grad, rcond=None)[0]
            target = theta + step
        else:
            # proximal Newton: minimize the local quadratic model plus the L1 term
            c = H @ theta - grad
            target, _, _ = cd_quadratic(H, c, lam_vec, b0=theta, tol=tol * 1e-2, max_sweeps=5000)
        direction = target - theta
        t, new_obj = 1.0, None
        for _ in range(60):
            cand = theta + t * direction
            cand_obj = _logistic_objective(A, yv, w, cand, lam_vec, ridge)
            if cand_obj <= obj:
                new_obj = cand_obj
                break
            t *= 0.5
        if new_obj is None:
            return theta, True, history
        theta = theta + t * direction
        history.append(new_obj)
        converged = np.max(np.abs(t * direction)) < tol or obj - new_obj < 1e-14 * max(1.0, abs(obj))
        obj = new_obj
        if converged:
            return theta, True, history
    return theta, False, history


def fit_logistic(
    X,
    y,
    penalty: str = "none",
    lam: float = 0.0,
    class_balance: bool = True,
    max_iter: int = 100,
    tol: float = 1e-9,
) -> LinearModel:
    """Binary logistic regression by (proximal) Newton / IRLS steps.

    The penalty acts on standardized columns. With ``class_balance`` each
    sample is weighted by ``n / (2 * n_class)``. Every accepted step lowers
    the penalized deviance (backtracking line search). If the iteration cap
    is hit, typically under perfect separation, the fit is redone with a
    1e-6 ridge term and flagged ``separation``.
    """
    if penalty not in ("none", "l1"):
        raise ConfigError(f"unknown penalty {penalty!r}")
    lam = float(lam) if penalty == "l1" else 0.0
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    X = as_matrix(X).values
    y = as_target(y, "classification")
    if y.n_classes != 2:
        raise ConfigError("fit_logistic supports binary targets only")
    yv = y.values
    if np.unique(yv).size < 2:
        raise ConfigError("fit_logistic needs both classes present")
    w = class_weights(yv, class_balance)
    Z, mean, sd, active = _standardize(X)
    theta, ok, history = _fit_logistic_std(Z, yv, w, lam, 0.0, max_iter, tol)
    flags = ()
    if not ok:
        theta, ok, history = _fit_logistic_std(Z, yv, w, lam, 1e-6, max_iter, tol)
        flags = ("separation",)
    b = theta[1:].copy()
    b[~active] = 0.0
    beta = b / sd
    return LinearModel(beta, theta[0] - mean @ beta, "logit", penalty, lam, flags, tuple(history))


def logistic_lambda_max(X, y, class_balance: bool = True) -> float:
    Z, *_ = _standardize(as_matrix(X).values)
    yv = as_target(y, "classification").values
    return _logistic_lambda_max(Z, yv, class_weights(yv, class_balance))


def lambda_grid(lam_max: float, points: int = 20, ratio: float = 1e-3) -> np.ndarray:
    """Decreasing log-spaced grid from ``lam_max`` to ``ratio * lam_max``."""
    return lam_max * np.logspace(0.0, np.log10(ratio), points)


def fit_sparse(X, y, task: str, min_nonzero: int = 1, class_balance: bool = True, points: int = 20):
    """Fit with the largest grid lambda that keeps at least ``min_nonzero`` coefficients."""
    if task == "regression":
        grid = lambda_grid(lasso_lambda_max(X, y), points)
        fit = lambda lam: fit_lasso(X, y, lam)  # noqa: E731
    else:
        grid = lambda_grid(logistic_lambda_max(X, y, class_balance), points)
        fit = lambda lam: fit_logistic(X, y, "l1", lam, class_balance)  # noqa: E731
    model = None
    for lam in grid:
        model = fit(lam)
        if model.nonzero >= min_nonzero:
            return model
    return model


def fit_excluding(fit: Callable, X, y, exclude: Sequence[int]):
    """Fit on all columns but ``exclude``, then reinsert those with coefficient 0."""
    X = as_matrix(X)
    exclude = sorted(set(int(j) for j in exclude))
    keep = [j for j in range(X.p) if j not in exclude]
    if not keep:
        raise ConfigError("cannot exclude every feature")
    sub = fit(DataMatrix(X.values[:, keep], [X.feature_meta[j] for j in keep]), y)
    coef = np.zeros(X.p)
    coef[keep] = sub.coefficients
    return LinearModel(coef, sub.intercept, sub.link, sub.penalty, sub.lam, sub.flags + ("excluded",), sub.history)


GROUND_TRUTH_CONVENTIONS = ("abs-beta-sd", "abs-beta", "squared")


def ground_truth_importance(model: LinearModel, X, convention: str = "abs-beta-sd") -> np.ndarray:
    """Normalized reference importances read off a linear model.

    The default is ``|beta_j| * sd_j`` with the sample standard deviation
    of column j of ``X``; ``abs-beta`` drops the scale and ``squared`` uses
    ``(beta_j * sd_j)^2``.
    """
    X = as_matrix(X).values
    beta = np.abs(model.coefficients)
    if beta.size != X.shape[1]:
        raise ConfigError("model and matrix disagree on the number of features")
    sd = X.std(axis=0, ddof=1)
    if convention == "abs-beta-sd":
        mu = beta * sd
    elif convention == "abs-beta":
        mu = beta.copy()
    elif convention == "squared":
        mu = (beta * sd) ** 2
    else:
        raise ConfigError(f"unknown ground-truth convention {convention!r}")
    mu[model.coefficients == 0] = 0.0
    total = mu.sum()
    if not total > 0:
        raise DegenerateImportanceError("degenerate importance: every coefficient is zero")
    return mu / total


class ExternalPredictor:
    """Client side of the external line protocol.

    One child process per instance, started lazily. Each request is a header
    line ``#predict n=<n> p=<p> q=<q>`` followed by ``n`` CSV rows; the child
    answers with ``n`` rows of ``q`` comma-separated reals and a closing
    ``#end`` line. Closing stdin asks the child to exit with status 0.
    """

    def __init__(self, command, q: int, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ConfigError("empty external predictor command")
        self.q = int(q)
        self.timeout = float(timeout)
        self._proc = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._lock = threading.Lock()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise PredictorError(f"cannot launch predictor {self.command[0]!r}: {exc}") from exc
        threading.Thread(target=self._pump, args=(self._proc.stdout,), daemon=True).start()

    def _pump(self, stream):
        for line in stream:
            self._lines.put(line)
        self._lines.put(None)

    def _readline(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._kill()
            raise PredictorError(f"predictor timed out after {self.timeout:g} s") from None
        if line is None:
            err = self._proc.stderr.read() if self._proc.stderr else ""
            raise PredictorError(f"predictor exited mid-response: {err.strip()[:500]}")
        return line.rstrip("\r\n")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        with self._lock:
            if self._proc is None:
                self._start()
            try:
                return self._exchange(X, n, p)
            except PredictorError:
                self._abort()
                raise

    def _exchange(self, X, n, p):
        payload = [f"#predict n={n} p={p} q={self.q}"]
        payload.extend(",".join(format(v, ".17g") for v in row) for row in X)
        try:
            self._proc.stdin.write("\n".join(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PredictorError(f"predictor closed its input: {exc}") from exc
        out = np.empty((n, self.q))
        for i in range(n):
            line = self._readline()
            cells = line.split(",")
            if len(cells) != self.q:
                raise PredictorError(f"response row {i}: expected {self.q} values, got {len(cells)}")
            try:
                out[i] = [float(c) for c in cells]
            except ValueError:
                raise PredictorError(f"response row {i}: not numeric: {line[:80]!r}") from None
        tail = self._readline()
        if tail.strip() != "#end":
            raise PredictorError(f"expected '#end' after {n} rows, got {tail[:80]!r}")
        return out

    def _kill(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()

    def _abort(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        if proc.poll() is None:
            proc.kill()
        proc.wait()
        for stream in (proc.stdin, proc.stdout, proc.stderr):
            if stream:
                try:
                    stream.close()
                except OSError:
                    pass
        self._lines = queue.Queue()

    def close(self):
        with self._lock:
            proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
            code = proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            raise PredictorError("predictor did not exit after end of input") from None
        finally:
            for stream in (proc.stdout, proc.stderr):
                if stream:
                    stream.close()
        if code != 0:
            raise PredictorError(f"predictor exited with status {code}")


class PredictorHandle:
    """Uniform ``predict`` over built-in models, callables and external processes.

    ``predict`` always returns an ``n x q`` float array and checks it: all
    entries finite, and for ``classification`` handles, rows in [0, 1]
    summing to one within 1e-6.
    """

    def __init__(self, fn: Callable, q: int, backend: str = "callable", task: Optional[str] = None, model=None, description=""):
        self._fn = fn
        self.q = int(q)
        self.backend = backend
        self.task = task or ("regression" if self.q == 1 else "classification")
        self.model = model
        self.description = description

    @classmethod
    def builtin(cls, model: LinearModel) -> "PredictorHandle":
        task = "regression" if model.link == "identity" else "classification"
        return cls(model.predict, model.q, "builtin", task, model, f"builtin {model.link}/{model.penalty}")

    @classmethod
    def external(cls, command, q: int, timeout: float = 60.0, task: Optional[str] = None) -> "PredictorHandle":
        client = ExternalPredictor(command, q, timeout)
        return cls(client, q, "external", task, None, f"external {' '.join(client.command)}")

    @classmethod
    def from_callable(cls, fn: Callable, q: int = 1, task: Optional[str] = None) -> "PredictorHandle":
        def wrapped(X):
            out = np.asarray(fn(X), dtype=float)
            return out.reshape(-1, 1) if out.ndim == 1 else out

        return cls(wrapped, q, "callable", task)

    @property
    def p(self) -> Optional[int]:
        return self.model.p if self.model is not None else None

    def predict(self, X) -> np.ndarray:
        X = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
        if self.p is not None and X.shape[1] != self.p:
            raise ConfigError(f"model expects {self.p} features, matrix has {X.shape[1]}")
        try:
            out = self._fn(X)
        except PredictorError:
            raise
        except ConfigError:
            raise
        except Exception as exc:
            raise PredictorError(f"prediction failed: {exc}") from exc
        # copy: a callable may hand back a view of the caller's working matrix
        out = np.array(out, dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (X.shape[0], self.q):
            raise PredictorError(f"predictor returned shape {out.shape}, expected {(X.shape[0], self.q)}")
        if not np.all(np.isfinite(out)):
            raise PredictorError("predictor returned non-finite values")
        if self.task == "classification" and self.q > 1:
            if np.any(out < -1e-12) or np.any(out > 1 + 1e-12) or np.max(np.abs(out.sum(axis=1) - 1)) > 1e-6:
                raise PredictorError("class probabilities must lie in [0, 1] and sum to 1")
        return out

    def close(self):
        if isinstance(self._fn, ExternalPredictor):
            self._fn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def predict(handle: PredictorHandle, X) -> np.ndarray:
    return handle.predict(X)


def as_handle(model) -> PredictorHandle:
    if isinstance(model, PredictorHandle):
        return model
    if isinstance(model, LinearModel):
        return PredictorHandle.builtin(model)
    if callable(model):
        return PredictorHandle.from_callable(model)
    raise ConfigError(f"cannot build a predictor from {type(model).__name__}")
