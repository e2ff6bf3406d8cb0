"""Forward and backward stepwise selection of logistic-model columns by AIC.

Both directions move one column at a time, take the candidate with the
lowest AIC, and stop as soon as no candidate improves AIC strictly. Ties
go to the lowest column index. Fits are memoised per column subset and
warm-started from the model the move departs from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_design_arrays
from .glm import INTERCEPT, DenseOperator, FitOptions, LogisticModel, _fit_prepared


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Action(str, Enum):
    ADD = "add"
    DROP = "drop"


@dataclass(frozen=True)
class Step:
    action: Action
    column: str
    aic_after: float


@dataclass
class SelectionTrace:
    direction: Direction
    steps: list[Step]
    final_model: LogisticModel
    selected_columns: tuple[str, ...]
    start_aic: float = float("nan")
    n_fits: int = field(default=0, compare=False)

    @property
    def final_aic(self) -> float:
        return self.final_model.aic

    def replay(self, all_columns: Sequence[str]) -> tuple[str, ...]:
        """Column set obtained by applying the steps to the starting set."""
        current = set() if self.direction is Direction.FORWARD else set(all_columns)
        for step in self.steps:
            if step.action is Action.ADD:
                current.add(step.column)
            else:
                current.discard(step.column)
        return tuple(c for c in all_columns if c in current)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.value,
            "start_aic": self.start_aic,
            "steps": [
                {"action": s.action.value, "column": s.column, "aic_after": s.aic_after} for s in self.steps
            ],
            "selected_columns": list(self.selected_columns),
            "final_aic": self.final_aic,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _SparseBasis:
    """Rewrites design columns over a basis of dense and sparse 0/1 columns.

    Non-binary columns (and the intercept) stay dense. A binary column is
    kept as a sparse indicator when it is mostly zero and stored as
    ``1 - indicator`` otherwise, so every column of the working matrix is
    ``Z @ t`` for a short coefficient vector ``t``. Weighted Gram matrices
    then cost a pass over pairs of nonzeros instead of a dense product.
    """

    def __init__(self, X: np.ndarray):
        n, p = X.shape
        self.n = n
        binary = np.all((X == 0) | (X == 1), axis=0)
        binary[0] = False  # intercept, the dense ones column
        density = X.mean(axis=0)
        self.dense_cols = [j for j in range(p) if not binary[j]]
        self.sparse_cols = [j for j in range(p) if binary[j]]
        self.complement = {j: bool(density[j] > 0.5) for j in self.sparse_cols}
        self.D = np.ascontiguousarray(X[:, self.dense_cols])
        ind = np.column_stack(
            [1.0 - X[:, j] if self.complement[j] else X[:, j] for j in self.sparse_cols]
        ) if self.sparse_cols else np.zeros((n, 0))
        rows, cols = np.nonzero(ind)  # row-major order
        self.rows, self.cols = rows, cols
        self.ns = len(self.sparse_cols)
        self.nd = len(self.dense_cols)
        starts = np.searchsorted(rows, np.arange(n + 1))
        # off-diagonal pairs a < b of nonzeros sharing a row; indicators are
        # 0/1, so the diagonal equals the intercept cross-product
        pair_rows, pair_idx = [], []
        for i in range(n):
            c = cols[starts[i]:starts[i + 1]]
            if c.size > 1:
                a, b = np.triu_indices(c.size, 1)
                pair_rows.append(np.full(a.size, i))
                pair_idx.append(c[a] * self.ns + c[b])
        self.pair_rows = np.concatenate(pair_rows) if pair_rows else np.zeros(0, dtype=int)
        self.pair_idx = np.concatenate(pair_idx) if pair_idx else np.zeros(0, dtype=int)
        self.DT = np.ascontiguousarray(self.D.T)
        self.D_nz = np.ascontiguousarray(self.DT[:, rows])
        self.dense_pos = {j: k for k, j in enumerate(self.dense_cols)}
        self.sparse_pos = {j: k for k, j in enumerate(self.sparse_cols)}
        # rough flop count of one basis_gram call, for choosing the cheaper path
        self.gram_cost = 4 * (self.pair_idx.size + rows.size * self.nd + n * self.nd**2) + (self.nd + self.ns) ** 3

    def transform(self, columns: Sequence[int]) -> np.ndarray:
        """Coefficients expressing working columns ``columns`` over the basis."""
        T = np.zeros((self.nd + self.ns, len(columns)))
        for k, j in enumerate(columns):
            if j in self.dense_pos:
                T[self.dense_pos[j], k] = 1.0
            elif self.complement[j]:
                T[0, k] = 1.0
                T[self.nd + self.sparse_pos[j], k] = -1.0
            else:
                T[self.nd + self.sparse_pos[j], k] = 1.0
        return T

    def basis_gram(self, w: np.ndarray) -> np.ndarray:
        nd, ns = self.nd, self.ns
        G = np.empty((nd + ns, nd + ns))
        wDT = self.DT * w
        G[:nd, :nd] = wDT @ self.D
        w_nz = w[self.rows]
        G[0, nd:] = np.bincount(self.cols, weights=w_nz, minlength=ns)
        for a in range(1, nd):
            G[a, nd:] = np.bincount(self.cols, weights=w_nz * self.D_nz[a], minlength=ns)
        G[nd:, :nd] = G[:nd, nd:].T
        S = np.bincount(self.pair_idx, weights=w[self.pair_rows], minlength=ns * ns).reshape(ns, ns)
        S += S.T
        S[np.diag_indices(ns)] = G[0, nd:]
        G[nd:, nd:] = S
        return G


class _BasisOperator:
    """Products with the working-matrix columns ``columns`` via a _SparseBasis."""

    def __init__(self, basis: _SparseBasis, columns: Sequence[int]):
        self.basis = basis
        self.T = basis.transform(columns)
        self.shape = (basis.n, len(columns))

    def matvec(self, beta):
        b = self.basis
        g = self.T @ beta
        eta = b.D @ g[: b.nd]
        if b.ns:
            eta = eta + np.bincount(b.rows, weights=g[b.nd:][b.cols], minlength=b.n)
        return eta

    def rmatvec(self, r):
        b = self.basis
        z = np.concatenate([b.D.T @ r, np.bincount(b.cols, weights=r[b.rows], minlength=b.ns)])
        return self.T.T @ z

    def gram(self, w):
        return self.T.T @ self.basis.basis_gram(w) @ self.T


class _SubsetFitter:
    """Memoised fits keyed by column-index subsets."""

    def __init__(self, X, y, names, options, warm_start=True):
        # intercept is column 0 of the working matrix
        self.X = np.asfortranarray(np.column_stack([np.ones(X.shape[0]), X]))
        self.basis = _SparseBasis(self.X)
        self.y, self.names, self.options = y, names, options
        self.warm_start = warm_start
        self.cache: dict[frozenset, LogisticModel] = {}

    def __call__(self, subset, parent: LogisticModel | None = None) -> LogisticModel:
        key = frozenset(subset)
        model = self.cache.get(key)
        if model is None:
            cols = sorted(key)
            init = None if parent is None or not self.warm_start else parent.coefficients
            work = [0, *(c + 1 for c in cols)]
            if len(work) ** 2 * self.basis.n <= self.basis.gram_cost:
                ops = DenseOperator(np.ascontiguousarray(self.X[:, work]))
            else:
                ops = _BasisOperator(self.basis, work)
            names = (INTERCEPT, *(self.names[c] for c in cols))
            model = _fit_prepared(ops, self.y, names, self.options, init)
            self.cache[key] = model
        return model


def _argmin_first(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v < values[best]:
            best = i
    return best


def _select(X, y, names, direction: Direction, options: FitOptions | None) -> SelectionTrace:
    options = options or FitOptions()
    fit = _SubsetFitter(X, y, names, options)
    p = X.shape[1]
    current = set() if direction is Direction.FORWARD else set(range(p))
    model = fit(current)
    start_aic = model.aic
    steps: list[Step] = []
    while True:
        if direction is Direction.FORWARD:
            moves = [j for j in range(p) if j not in current]
            trial = [fit(current | {j}, model) for j in moves]
        else:
            moves = sorted(current)
            trial = [fit(current - {j}, model) for j in moves]
        if not moves:
            break
        best = _argmin_first([m.aic for m in trial])
        if not trial[best].aic < model.aic:
            break
        j = moves[best]
        model = trial[best]
        if direction is Direction.FORWARD:
            current.add(j)
            steps.append(Step(Action.ADD, names[j], model.aic))
        else:
            current.discard(j)
            steps.append(Step(Action.DROP, names[j], model.aic))
    selected = tuple(names[i] for i in sorted(current))
    return SelectionTrace(direction, steps, model, selected, start_aic, len(fit.cache))


def _unpack(design):
    return check_design_arrays(design.values, design.labels, design.column_names)


def forward_select(design, options: FitOptions | None = None) -> SelectionTrace:
    X, y, names = _unpack(design)
    return _select(X, y, names, Direction.FORWARD, options)


def backward_select(design, options: FitOptions | None = None) -> SelectionTrace:
    X, y, names = _unpack(design)
    return _select(X, y, names, Direction.BACKWARD, options)


def select(design, direction, options: FitOptions | None = None) -> SelectionTrace:
    X, y, names = _unpack(design)
    return _select(X, y, names, Direction(direction), options)


class StepwiseAICSelector(SelectorMixin, BaseEstimator):
    """Column selector driven by stepwise AIC on a logistic model.

    After ``fit`` the selected mask is available through ``get_support``,
    the full path through ``trace_`` and the refitted model on the kept
    columns through ``model_``; ``predict_proba`` scores with that model.
    """

    def __init__(self, direction="forward", max_iter=25, tol=1e-8, ridge_jitter=1e-10):
        self.direction = direction
        self.max_iter = max_iter
        self.tol = tol
        self.ridge_jitter = ridge_jitter

    def fit(self, X, y):
        cols = getattr(X, "columns", None)
        names = None if cols is None else [str(c) for c in cols]
        Xa, ya, names = check_design_arrays(np.asarray(X, dtype=float), y, names)
        if cols is not None:
            self.feature_names_in_ = np.asarray(names, dtype=object)
        self.n_features_in_ = Xa.shape[1]
        self.classes_ = np.array([0, 1])
        options = FitOptions(self.max_iter, self.tol, self.ridge_jitter)
        self.trace_ = _select(Xa, ya, names, Direction(self.direction), options)
        self.model_ = self.trace_.final_model
        chosen = set(self.trace_.selected_columns)
        self.support_ = np.array([n in chosen for n in names], dtype=bool)
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        Xs = np.asarray(X, dtype=float)[:, self.support_]
        p = expit(self.model_.intercept + Xs @ self.model_.beta())
        return np.column_stack([1.0 - p, p])
