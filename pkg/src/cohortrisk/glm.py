"""Binary logistic regression fitted by iteratively reweighted least squares.

The fitter is Newton-Raphson on the Bernoulli log-likelihood with a logit
link, written in its IRLS form: each iteration solves the weighted normal
equations ``(X' W X) step = X' (y - p)`` with ``W = diag(p (1 - p))``.
Accepted iterates never decrease the log-likelihood; a step that would is
halved until it does not.

Separated or quasi-separated data have no finite maximiser. The fitter
then stops on the deviance criterion or the iteration cap with large
coefficients and ``converged=False``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_design_arrays
from .errors import ColumnMismatch, DegenerateDesign, MissingColumn, NotPositiveDefinite

INTERCEPT = "intercept"
PROB_EPS = 1e-12
_MAX_HALVINGS = 30
_JITTER_ESCALATION = (1.0, 1e3, 1e6)


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 25
    rel_tolerance: float = 1e-8
    ridge_jitter: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.rel_tolerance > 0 and self.ridge_jitter > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class LogisticModel:
    """A fitted model. ``coefficients`` always starts with ``intercept``."""

    coefficients: dict[str, float]
    converged: bool
    log_likelihood: float
    aic: float
    iterations: int
    # per-iteration accepted log-likelihoods, for monotonicity checks
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.coefficients if c != INTERCEPT)

    @property
    def intercept(self) -> float:
        return self.coefficients.get(INTERCEPT, 0.0)

    @property
    def n_params(self) -> int:
        return len(self.coefficients)

    def beta(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in self.columns], dtype=float)

    def to_dict(self) -> dict:
        return {
            "coefficients": dict(self.coefficients),
            "converged": self.converged,
            "log_likelihood": self.log_likelihood,
            "aic": self.aic,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LogisticModel":
        return cls(
            coefficients={str(k): float(v) for k, v in data["coefficients"].items()},
            converged=bool(data["converged"]),
            log_likelihood=float(data["log_likelihood"]),
            aic=float(data["aic"]),
            iterations=int(data["iterations"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def solve_spd(matrix, rhs, ridge_jitter: float = 1e-10) -> np.ndarray:
    """Solve ``matrix @ x = rhs`` for a symmetric positive definite matrix.

    Uses a Cholesky factorisation. If the factorisation fails, a jitter of
    ``ridge_jitter`` times the mean diagonal is added and the solve retried,
    escalating the jitter twice before giving up.
    """
    a = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise ValueError("matrix must be square and match rhs")
    if a.shape[0] == 0:
        return np.zeros_like(b)
    try:
        return linalg.cho_solve(linalg.cho_factor(a, lower=True, check_finite=False), b)
    except linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.abs(np.diag(a)))), 1.0)
    eye = np.eye(a.shape[0])
    for factor in _JITTER_ESCALATION:
        try:
            jittered = a + ridge_jitter * factor * scale * eye
            return linalg.cho_solve(linalg.cho_factor(jittered, lower=True, check_finite=False), b)
        except linalg.LinAlgError:
            continue
    raise NotPositiveDefinite("matrix is not positive definite even after jitter")


_LOG_LO = math.log(PROB_EPS)
_LOG_HI = math.log1p(-PROB_EPS)


def _loglik_from_eta(eta: np.ndarray, y: np.ndarray) -> float:
    # log of the clamped probability of the observed outcome, computed as
    # clip(log p) so large |eta| neither overflows nor loses precision
    signed = np.where(y > 0.5, -eta, eta)
    softplus = np.maximum(signed, 0.0) + np.log1p(np.exp(-np.abs(signed)))
    return float(np.sum(np.clip(-softplus, _LOG_LO, _LOG_HI)))


def aic(model: LogisticModel) -> float:
    """``2k - 2 lnL`` with k counting every coefficient, intercept included."""
    return 2.0 * model.n_params - 2.0 * model.log_likelihood


class DenseOperator:
    """Design-matrix products the IRLS loop needs, for a dense matrix."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.shape = X.shape

    def matvec(self, beta: np.ndarray) -> np.ndarray:
        return self.X @ beta

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        return self.X.T @ r

    def gram(self, w: np.ndarray) -> np.ndarray:
        xs = self.X * np.sqrt(w)[:, None]
        return xs.T @ xs


def _irls(X, y: np.ndarray, options: FitOptions, init=None):
    ops = X if hasattr(X, "gram") else DenseOperator(X)
    n, p = ops.shape
    beta = np.zeros(p) if init is None else np.array(init, dtype=float)
    eta = ops.matvec(beta)
    ll = _loglik_from_eta(eta, y)
    history = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iterations + 1):
        mu = expit(eta)
        score = ops.rmatvec(y - mu)
        step = solve_spd(ops.gram(mu * (1.0 - mu)), score, options.ridge_jitter)
        step_eta = ops.matvec(step)
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            cand_eta = eta + t * step_eta
            cand_ll = _loglik_from_eta(cand_eta, y)
            if cand_ll >= ll:
                break
            t *= 0.5
        else:
            # no ascent direction left at floating-point resolution
            converged = bool(np.max(np.abs(score), initial=0.0) <= 1e-6 * (1.0 + n))
            break
        moved = t * step
        old_ll = ll
        beta, eta, ll = beta + moved, cand_eta, cand_ll
        history.append(ll)
        # deviance is -2 lnL for 0/1 outcomes
        rel = 2.0 * abs(ll - old_ll) / (2.0 * abs(ll) + 0.1)
        if rel < options.rel_tolerance:
            # a still-large step means the optimum is at infinity (separation)
            converged = bool(
                np.max(np.abs(moved), initial=0.0) <= 1e-3 * (1.0 + np.max(np.abs(beta), initial=0.0))
            )
            break
    return beta, ll, converged, iterations, history


def fit_logistic(
    X,
    y,
    column_names: Sequence[str] | None = None,
    options: FitOptions | None = None,
    *,
    fit_intercept: bool = True,
    init: Mapping[str, float] | None = None,
) -> LogisticModel:
    """Fit a logistic model on ``X`` (rows x columns) and 0/1 labels ``y``.

    ``init`` optionally seeds coefficients by name; missing names start at
    zero. Raises DegenerateDesign when there are no rows, or no parameters
    at all.
    """
    options = options or FitOptions()
    X, y, names = check_design_arrays(X, y, column_names)
    if not fit_intercept and X.shape[1] == 0:
        raise DegenerateDesign("design has zero columns and no intercept")
    if fit_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = (INTERCEPT, *names)
    return _fit_prepared(X, y, names, options, init)


def _fit_prepared(X, y, names, options: FitOptions, init=None) -> LogisticModel:
    """Fit on an already validated matrix whose columns are exactly ``names``."""
    start = None
    if init is not None:
        start = [float(init.get(name, 0.0)) for name in names]
    beta, ll, converged, iterations, history = _irls(X, y, options, start)
    coefficients = {name: float(b) for name, b in zip(names, beta)}
    model = LogisticModel(coefficients, converged, ll, 0.0, iterations, history)
    model.aic = aic(model)
    return model


def fit_design(design, columns: Sequence[str] | None = None, options: FitOptions | None = None) -> LogisticModel:
    """Fit on a DesignMatrix, optionally restricted to ``columns``."""
    sub = design if columns is None else design.select(columns)
    return fit_logistic(sub.values, sub.labels, sub.column_names, options)


def linear_predictor(model: LogisticModel, X, column_names: Sequence[str]) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    index = {c: i for i, c in enumerate(column_names)}
    missing = [c for c in model.columns if c not in index]
    if missing:
        raise ColumnMismatch(f"design lacks model columns {missing}")
    cols = [index[c] for c in model.columns]
    return model.intercept + X[:, cols] @ model.beta()


def predict_proba_matrix(model: LogisticModel, design) -> np.ndarray:
    return expit(linear_predictor(model, design.values, design.column_names))


def log_likelihood(model: LogisticModel, design) -> float:
    """Clamped Bernoulli log-likelihood of ``design.labels`` under ``model``."""
    eta = linear_predictor(model, design.values, design.column_names)
    return _loglik_from_eta(eta, design.labels)


def predict_prob(model: LogisticModel, row: Mapping[str, float]) -> float:
    missing = [c for c in model.columns if c not in row]
    if missing:
        raise MissingColumn(f"row lacks {missing}")
    eta = model.intercept + sum(model.coefficients[c] * float(row[c]) for c in model.columns)
    return float(expit(eta))


def score_vector(model: LogisticModel, design) -> np.ndarray:
    """Gradient of the unclamped log-likelihood, intercept first."""
    X = design.values[:, [design.column_index(c) for c in model.columns]]
    mu = expit(model.intercept + X @ model.beta())
    resid = design.labels - mu
    grad = X.T @ resid
    if INTERCEPT in model.coefficients:
        grad = np.concatenate([[resid.sum()], grad])
    return grad


class IRLSLogisticRegression(ClassifierMixin, BaseEstimator):
    """Unpenalised logistic regression with an sklearn interface.

    Parameters
    ----------
    max_iter : int
        Cap on IRLS iterations.
    tol : float
        Relative deviance change that stops the iteration.
    ridge_jitter : float
        Diagonal jitter used when the weighted normal equations are singular.
    fit_intercept : bool
    """

    def __init__(self, max_iter=25, tol=1e-8, ridge_jitter=1e-10, fit_intercept=True):
        self.max_iter = max_iter
        self.tol = tol
        self.ridge_jitter = ridge_jitter
        self.fit_intercept = fit_intercept

    def _options(self):
        return FitOptions(self.max_iter, self.tol, self.ridge_jitter)

    def fit(self, X, y):
        names = getattr(X, "columns", None)
        if names is not None:
            self.feature_names_in_ = np.asarray([str(c) for c in names], dtype=object)
        Xa = np.asarray(X, dtype=float)
        ya = np.asarray(y).ravel()
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = Xa.shape[1] if Xa.ndim == 2 else 1
        cols = None if names is None else [str(c) for c in names]
        self.model_ = fit_logistic(Xa, ya, cols, self._options(), fit_intercept=self.fit_intercept)
        self.coef_ = self.model_.beta().reshape(1, -1)
        self.intercept_ = np.array([self.model_.intercept])
        self.n_iter_ = self.model_.iterations
        self.converged_ = self.model_.converged
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        Xa = np.asarray(X, dtype=float)
        if Xa.ndim == 1:
            Xa = Xa.reshape(-1, 1)
        if Xa.shape[1] != self.n_features_in_:
            raise ColumnMismatch(f"expected {self.n_features_in_} columns, got {Xa.shape[1]}")
        return self.intercept_[0] + Xa @ self.coef_[0]

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)
