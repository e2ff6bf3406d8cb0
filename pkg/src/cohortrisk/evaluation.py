"""Cross-validated evaluation and coefficient-stability summaries."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .design import DesignMatrix
from .errors import ParseError, ZeroMargin
from .glm import INTERCEPT, FitOptions, LogisticModel, fit_design, predict_proba_matrix
from .metrics import ContingencyTable, case_control_ratio, chi_square_yates, kfold_split, roc_auc
from .stepwise import Direction, select

SELECTORS = ("none", "forward", "backward")


@dataclass
class FoldResult:
    fold: int
    model: LogisticModel
    auc: float
    selected_columns: tuple[str, ...]
    test_ids: tuple[str, ...]
    test_scores: np.ndarray
    test_labels: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "auc": self.auc,
            "selected_columns": list(self.selected_columns),
            "model": self.model.to_dict(),
        }


@dataclass
class CvReport:
    folds: int
    selector: str
    seed: int
    per_fold: list[FoldResult]
    auc_mean: float
    auc_std: float
    row_ids: tuple[str, ...]
    pooled: np.ndarray  # held-out score per design row
    labels: np.ndarray
    fold_of_row: np.ndarray
    n_columns: int = 0
    feature_set: int | None = None
    column_counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def pooled_scores(self) -> list[tuple[float, int]]:
        return list(zip(self.pooled.tolist(), self.labels.astype(int).tolist()))

    @property
    def n_cases(self) -> int:
        return int(self.labels.sum())

    @property
    def n_controls(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def scores_by_id(self) -> dict[str, float]:
        return dict(zip(self.row_ids, self.pooled.tolist()))

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "selector": self.selector,
            "seed": self.seed,
            "feature_set": self.feature_set,
            "n_columns": self.n_columns,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "per_fold": [f.to_dict() for f in self.per_fold],
            "pooled_scores": [
                {"patient_id": pid, "score": float(s), "label": int(lab), "fold": int(fo)}
                for pid, s, lab, fo in zip(self.row_ids, self.pooled, self.labels, self.fold_of_row)
            ],
            "column_counts": {k: list(v) for k, v in self.column_counts.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: Mapping) -> "CvReport":
        pooled = data["pooled_scores"]
        ids = tuple(r["patient_id"] for r in pooled)
        scores = np.array([r["score"] for r in pooled], dtype=float)
        labels = np.array([r["label"] for r in pooled], dtype=float)
        fold_of_row = np.array([r["fold"] for r in pooled], dtype=int)
        per_fold = []
        for f in data["per_fold"]:
            mask = fold_of_row == f["fold"]
            per_fold.append(
                FoldResult(
                    int(f["fold"]),
                    LogisticModel.from_dict(f["model"]),
                    float(f["auc"]),
                    tuple(f["selected_columns"]),
                    tuple(np.array(ids, dtype=object)[mask]),
                    scores[mask],
                    labels[mask],
                )
            )
        return cls(
            folds=int(data["folds"]),
            selector=data["selector"],
            seed=int(data["seed"]),
            per_fold=per_fold,
            auc_mean=float(data["auc_mean"]),
            auc_std=float(data["auc_std"]),
            row_ids=ids,
            pooled=scores,
            labels=labels,
            fold_of_row=fold_of_row,
            n_columns=int(data.get("n_columns", 0)),
            feature_set=data.get("feature_set"),
            column_counts={k: (int(v[0]), int(v[1])) for k, v in data.get("column_counts", {}).items()},
        )

    @classmethod
    def read(cls, path) -> "CvReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError("MalformedRecord", f"{path}: not a CV report ({exc})") from None


def column_counts(design: DesignMatrix) -> dict[str, tuple[int, int]]:
    """(cases, controls) having a nonzero value, for each 0/1 column."""
    out = {}
    cases = design.labels == 1
    for j, name in enumerate(design.column_names):
        col = design.values[:, j]
        if np.all((col == 0) | (col == 1)):
            out[name] = (int(col[cases].sum()), int(col[~cases].sum()))
    return out


def _run_fold(design: DesignMatrix, fold: int, test_idx, selector: str, options: FitOptions):
    mask = np.ones(design.n_rows, dtype=bool)
    mask[test_idx] = False
    train = design.take(np.flatnonzero(mask))
    test = design.take(test_idx)
    if selector == "none":
        model = fit_design(train, options=options)
    else:
        model = select(train, Direction(selector), options).final_model
    scores = predict_proba_matrix(model, test)
    auc = roc_auc(scores, test.labels).auc
    return FoldResult(fold, model, auc, model.columns, test.row_ids, scores, test.labels)


def cross_validate(
    design: DesignMatrix,
    selector: str | None = "none",
    k: int = 10,
    seed: int = 0,
    options: FitOptions | None = None,
    *,
    threads: int = 1,
    feature_set: int | None = None,
) -> CvReport:
    """Stratified k-fold CV; selection, when asked for, reruns in every fold."""
    selector = "none" if selector is None else str(getattr(selector, "value", selector))
    if selector not in SELECTORS:
        raise ValueError(f"selector must be one of {SELECTORS}")
    options = options or FitOptions()
    folds = kfold_split(design.n_rows, k, design.labels, seed)
    workers = (os.cpu_count() or 1) if threads == 0 else max(1, threads)

    def work(i):
        return _run_fold(design, i, folds[i], selector, options)

    if workers == 1:
        results = [work(i) for i in range(k)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(k)))

    pooled = np.empty(design.n_rows)
    fold_of_row = np.empty(design.n_rows, dtype=int)
    for res, idx in zip(results, folds):
        pooled[idx] = res.test_scores
        fold_of_row[idx] = res.fold
    aucs = np.array([r.auc for r in results])
    return CvReport(
        folds=k,
        selector=selector,
        seed=seed,
        per_fold=results,
        auc_mean=float(aucs.mean()),
        auc_std=float(aucs.std(ddof=1)) if k > 1 else 0.0,
        row_ids=design.row_ids,
        pooled=pooled,
        labels=design.labels.copy(),
        fold_of_row=fold_of_row,
        n_columns=len(design.column_names),
        feature_set=feature_set,
        column_counts=column_counts(design),
    )


@dataclass(frozen=True)
class StabilityRow:
    feature: str
    beta_mean: float
    beta_std: float
    n_folds: int
    case_count: int | None
    control_count: int | None
    ratio: float | None
    p_value: float | None

    @property
    def significant(self) -> bool | None:
        return None if self.p_value is None else self.p_value < 0.05


@dataclass(frozen=True)
class CoefficientStability:
    rows: tuple[StabilityRow, ...]
    min_folds: int = 5
    beta_magnitude: float = 1.0


def coefficient_stability(
    per_fold_models: Sequence[LogisticModel],
    cohort_counts: Mapping[str, tuple[int, int]],
    n_cases: int,
    n_controls: int,
    min_folds: int = 5,
    beta_magnitude: float = 1.0,
) -> CoefficientStability:
    """Features picked in at least ``min_folds`` folds with ``|mean beta| > beta_magnitude``.

    Means and sample standard deviations run over the folds that picked the
    feature. Counts, the case/control ratio and the Yates p-value come from
    the whole cohort.
    """
    betas: dict[str, list[float]] = {}
    for model in per_fold_models:
        for name, value in model.coefficients.items():
            if name != INTERCEPT:
                betas.setdefault(name, []).append(value)
    rows = []
    for name, values in betas.items():
        if len(values) < min_folds:
            continue
        mean = float(np.mean(values))
        if not abs(mean) > beta_magnitude:
            continue
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        counts = cohort_counts.get(name)
        case_count = control_count = ratio = p_value = None
        if counts is not None:
            case_count, control_count = counts
            table = ContingencyTable.from_counts(case_count, control_count, n_cases, n_controls)
            ratio = case_control_ratio(table)
            try:
                p_value = chi_square_yates(table)[1]
            except ZeroMargin:
                p_value = None
        rows.append(StabilityRow(name, mean, std, len(values), case_count, control_count, ratio, p_value))
    rows.sort(key=lambda r: (-r.beta_mean, r.feature))
    return CoefficientStability(tuple(rows), min_folds, beta_magnitude)


def format_ratio(ratio: float | None) -> str:
    if ratio is None or (isinstance(ratio, float) and math.isnan(ratio)):
        return ""
    if math.isinf(ratio):
        return "inf"
    return f"{ratio:.3f}"
