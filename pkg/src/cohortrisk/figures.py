"""Tabular data behind the result figures and tables.

Nothing here plots; every function returns rows that the CLI writes as
CSV for an external plotting tool.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import MisalignedCohorts, NoCrossing
from .evaluation import CvReport
from .metrics import roc_auc, sens_spec_intersection, threshold_sweep

KDE_GRID = 100


@dataclass(frozen=True)
class KdeGrid:
    """Density on cell centres of a ``size`` x ``size`` grid over the unit square.

    ``density[i, j]`` is the value at ``(centers[i], centers[j])``.
    """

    centers: np.ndarray
    density: np.ndarray
    bandwidth: tuple[float, float]

    @property
    def cell_area(self) -> float:
        return (1.0 / self.centers.size) ** 2

    def mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


def scott_bandwidth(values: np.ndarray, fallback: float) -> float:
    """Scott's rule for one axis of a 2-D product kernel: sigma * n^(-1/6)."""
    n = values.size
    sigma = float(np.std(values, ddof=1)) if n > 1 else 0.0
    if not sigma > 0:
        return fallback
    return sigma * n ** (-1.0 / 6.0)


def kde2d(x, y, size: int = KDE_GRID) -> KdeGrid:
    """Gaussian product-kernel KDE of points ``(x, y)`` on the unit square.

    Bandwidths follow Scott's rule per axis; an axis with no spread uses
    one grid cell instead.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size == 0:
        raise ValueError("x and y must be nonempty and of equal length")
    centers = (np.arange(size) + 0.5) / size
    hx = scott_bandwidth(x, 1.0 / size)
    hy = scott_bandwidth(y, 1.0 / size)
    kx = np.exp(-0.5 * ((centers[:, None] - x[None, :]) / hx) ** 2) / (hx * math.sqrt(2 * math.pi))
    ky = np.exp(-0.5 * ((centers[:, None] - y[None, :]) / hy) ** 2) / (hy * math.sqrt(2 * math.pi))
    density = kx @ ky.T / x.size
    return KdeGrid(centers, density, (hx, hy))


@dataclass(frozen=True)
class BoxStats:
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_low: float
    whisker_high: float
    n_outliers: int


def box_stats(values) -> BoxStats:
    """Quartiles (linear interpolation) and Tukey 1.5 IQR whiskers."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return BoxStats(
        int(v.size),
        float(v[0]),
        float(q1),
        float(med),
        float(q3),
        float(v[-1]),
        float(inside[0]),
        float(inside[-1]),
        int(v.size - inside.size),
    )


@dataclass
class FigureData:
    """Rows for each emitted table, keyed by output file stem."""

    tables: dict[str, list[dict]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> list[dict]:
        return self.tables[name]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, rows in self.tables.items():
            path = out / f"{name}.csv"
            write_rows(path, rows, FIGURE_COLUMNS[name])
            paths.append(path)
        return paths


FIGURE_COLUMNS = {
    "fig2_auc": ["feature_set", "selector", "auc_mean", "auc_std", "folds"],
    "fig3_counts": ["feature_set", "selector", "fold", "n_selected", "n_columns"],
    "fig4_pairs": ["selector", "prev_set", "next_set", "patient_id", "prev_prob", "next_prob"],
    "fig5_kde": ["selector", "prev_set", "next_set", "x", "y", "density"],
    "fig6_box": [
        "feature_set", "selector", "label", "n", "minimum", "q1", "median", "q3", "maximum",
        "whisker_low", "whisker_high", "n_outliers",
    ],
    "fig7_roc": ["feature_set", "selector", "threshold", "fpr", "tpr"],
    "fig7_sweep": ["feature_set", "selector", "threshold", "sensitivity", "specificity", "ppv"],
    "table3_intersection": ["feature_set", "selector", "cutoff", "value", "ppv"],
}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def write_rows(path, rows: Sequence[Mapping], columns: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def check_aligned(reports: Sequence[CvReport]) -> None:
    """All reports must score the same patients with the same labels."""
    if not reports:
        return
    ref = reports[0]
    ref_labels = dict(zip(ref.row_ids, ref.labels.tolist()))
    for rep in reports[1:]:
        if set(rep.row_ids) != set(ref.row_ids):
            raise MisalignedCohorts("reports cover different patients")
        if dict(zip(rep.row_ids, rep.labels.tolist())) != ref_labels:
            raise MisalignedCohorts("reports disagree on labels")


def emit_figure_data(reports: Mapping[tuple[int, str], CvReport], kde_size: int = KDE_GRID) -> FigureData:
    """Figure tables from CV reports keyed by ``(feature_set, selector)``.

    Consecutive feature sets are those adjacent in sorted order within one
    selector.
    """
    keys = sorted(reports)
    check_aligned([reports[k] for k in keys])
    fig = FigureData({name: [] for name in FIGURE_COLUMNS})
    for fs, sel in keys:
        rep = reports[(fs, sel)]
        fig["fig2_auc"].append(
            {"feature_set": fs, "selector": sel, "auc_mean": rep.auc_mean, "auc_std": rep.auc_std, "folds": rep.folds}
        )
        for f in rep.per_fold:
            fig["fig3_counts"].append(
                {
                    "feature_set": fs,
                    "selector": sel,
                    "fold": f.fold,
                    "n_selected": len(f.selected_columns),
                    "n_columns": rep.n_columns,
                }
            )
        for label, name in ((1, "case"), (0, "control")):
            stats = box_stats(rep.pooled[rep.labels == label])
            fig["fig6_box"].append({"feature_set": fs, "selector": sel, "label": name, **stats.__dict__})
        roc = roc_auc(rep.pooled, rep.labels)
        for t, fpr, tpr in zip(roc.thresholds, roc.fpr, roc.tpr):
            fig["fig7_roc"].append({"feature_set": fs, "selector": sel, "threshold": t, "fpr": fpr, "tpr": tpr})
        sweep = threshold_sweep(rep.pooled, rep.labels)
        for t, se, sp, pv in sweep.rows():
            fig["fig7_sweep"].append(
                {"feature_set": fs, "selector": sel, "threshold": t, "sensitivity": se, "specificity": sp, "ppv": pv}
            )
        try:
            cross = sens_spec_intersection(sweep)
        except NoCrossing:
            cross = None
        if cross is not None:
            fig["table3_intersection"].append(
                {"feature_set": fs, "selector": sel, "cutoff": cross.cutoff, "value": cross.value, "ppv": cross.ppv}
            )

    selectors = sorted({sel for _, sel in keys})
    for sel in selectors:
        sets = sorted(fs for fs, s in keys if s == sel)
        for prev, nxt in zip(sets, sets[1:]):
            a, b = reports[(prev, sel)], reports[(nxt, sel)]
            pa, pb = a.scores_by_id(), b.scores_by_id()
            labels = dict(zip(a.row_ids, a.labels.tolist()))
            ids = sorted(pa)
            for pid in ids:
                if labels[pid] == 1:
                    fig["fig4_pairs"].append(
                        {
                            "selector": sel,
                            "prev_set": prev,
                            "next_set": nxt,
                            "patient_id": pid,
                            "prev_prob": pa[pid],
                            "next_prob": pb[pid],
                        }
                    )
            controls = [pid for pid in ids if labels[pid] == 0]
            grid = kde2d([pa[p] for p in controls], [pb[p] for p in controls], kde_size)
            for i, x in enumerate(grid.centers):
                for j, y in enumerate(grid.centers):
                    fig["fig5_kde"].append(
                        {
                            "selector": sel,
                            "prev_set": prev,
                            "next_set": nxt,
                            "x": float(x),
                            "y": float(y),
                            "density": float(grid.density[i, j]),
                        }
                    )
    return fig


STABILITY_COLUMNS = ["feature", "beta_mean", "beta_std", "case", "control", "ratio", "p_value", "significant"]


def stability_rows(stability) -> list[dict]:
    return [
        {
            "feature": r.feature,
            "beta_mean": r.beta_mean,
            "beta_std": r.beta_std,
            "case": r.case_count,
            "control": r.control_count,
            "ratio": r.ratio,
            "p_value": r.p_value,
            "significant": r.significant,
        }
        for r in stability.rows
    ]
