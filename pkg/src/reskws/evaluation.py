"""Accuracy, confusion matrices, FAR/FRR curves and trial confidence intervals."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataset import CLASS_NAMES, KEYWORDS

THRESHOLD_STEP = 0.005
FAR_GRID = np.linspace(0.0, 1.0, 201)


def predictions(scores):
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(np.asarray(scores), axis=1)


def accuracy_from_scores(scores, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return float(np.mean(predictions(scores) == labels))


def accuracy(model, x, labels, batch_size=64) -> float:
    """Fraction of examples whose most probable class is the true one (eval mode)."""
    if len(labels) == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return accuracy_from_scores(model.predict_proba(x, batch_size), labels)


def confusion_matrix(pred, labels, n_classes=len(CLASS_NAMES)):
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


@dataclass
class RocCurve:
    name: str
    far: np.ndarray
    frr: np.ndarray
    thresholds: np.ndarray | None = None  # None for the averaged curve
    auc: float = float("nan")

    @property
    def points(self):
        return list(zip(self.far.tolist(), self.frr.tolist()))


def far_frr(scores_k, is_target, thresholds):
    """FAR and FRR of the rule "accept when score >= t" for each threshold."""
    scores_k = np.asarray(scores_k, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    tar = np.sort(scores_k[is_target])
    non = np.sort(scores_k[~is_target])
    t = np.asarray(thresholds, dtype=np.float64)
    # counts of scores strictly below t
    frr = np.searchsorted(tar, t, side="left") / max(tar.size, 1)
    far = 1.0 - np.searchsorted(non, t, side="left") / max(non.size, 1)
    return far, frr


def interp_frr(far, frr, grid=FAR_GRID):
    """FRR as a function of FAR on ``grid``: best (lowest) FRR per distinct FAR, linear in between."""
    far = np.asarray(far)
    frr = np.asarray(frr)
    uniq = np.unique(far)
    best = np.array([frr[far == f].min() for f in uniq])
    return np.interp(grid, uniq, best)


def area(frr_on_grid, grid=FAR_GRID) -> float:
    return float(np.trapezoid(frr_on_grid, grid))


def roc_sweep(scores, labels, keywords=range(len(KEYWORDS)), step=THRESHOLD_STEP, exact=True):
    """Per-keyword FAR/FRR curves and their vertical average.

    Thresholds are a uniform grid over [0, 1] plus one point past 1. With
    ``exact`` the distinct scores of each keyword are added as thresholds too,
    so every vertex of the empirical curve is present and the result does not
    depend on where the grid happens to fall.

    Returns ``(per_keyword: dict[int, RocCurve], average: RocCurve, excluded: list[int])``.
    Keywords with no positive example are excluded. All other examples,
    including unknown and silence, count as negatives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    grid = np.append(np.arange(0.0, 1.0 + step / 2, step), 1.0 + step)
    curves, excluded = {}, []
    for k in keywords:
        is_target = labels == k
        if not is_target.any() or is_target.all():
            excluded.append(int(k))
            continue
        th = np.union1d(grid, np.unique(scores[:, k])) if exact else grid
        far, frr = far_frr(scores[:, k], is_target, th)
        name = CLASS_NAMES[k] if k < len(CLASS_NAMES) else str(k)
        curves[int(k)] = RocCurve(name, far, frr, th, area(interp_frr(far, frr)))
    if curves:
        stacked = np.stack([interp_frr(c.far, c.frr) for c in curves.values()])
        avg_frr = stacked.mean(axis=0)
    else:
        avg_frr = np.full(FAR_GRID.shape, np.nan)
    average = RocCurve("average", FAR_GRID.copy(), avg_frr, None, area(avg_frr))
    return curves, average, excluded


def confidence_interval(values, level=0.95):
    """Mean and Student-t half width, ``t_{(1+level)/2, n-1} * s / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values for a confidence interval")
    s = v.std(ddof=1)
    t = stats.t.ppf(0.5 + level / 2, v.size - 1)
    return float(v.mean()), float(t * s / np.sqrt(v.size))


@dataclass
class EvalReport:
    accuracy: float
    n_examples: int
    confusion: np.ndarray
    precision: dict
    recall: dict
    roc: dict = field(default_factory=dict)
    roc_average: RocCurve | None = None
    excluded_keywords: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
            "classes": list(CLASS_NAMES),
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "roc_auc": {c.name: c.auc for c in self.roc.values()},
            "roc_average_auc": None if self.roc_average is None else self.roc_average.auc,
            "excluded_keywords": [CLASS_NAMES[k] for k in self.excluded_keywords],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write_roc_csv(self, path):
        write_roc_csv(path, self.roc, self.roc_average)


def report_from_scores(scores, labels) -> EvalReport:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty set")
    n_classes = len(CLASS_NAMES)
    pred = predictions(scores)
    cm = confusion_matrix(pred, labels, n_classes)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    diag = np.diag(cm)
    precision = {CLASS_NAMES[i]: (float(diag[i] / col[i]) if col[i] else None) for i in range(n_classes)}
    recall = {CLASS_NAMES[i]: (float(diag[i] / row[i]) if row[i] else None) for i in range(n_classes)}
    curves, avg, excluded = roc_sweep(scores, labels)
    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        n_examples=int(labels.size),
        confusion=cm,
        precision=precision,
        recall=recall,
        roc=curves,
        roc_average=avg,
        excluded_keywords=excluded,
    )


def evaluate(model, x, labels, batch_size=64) -> EvalReport:
    return report_from_scores(model.predict_proba(x, batch_size), labels)


def write_roc_csv(path, curves, average=None):
    """Columns threshold, keyword, far, frr. Averaged rows use keyword "average" and an empty threshold."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "keyword", "far", "frr"])
        for c in curves.values():
            for t, a, r in zip(c.thresholds, c.far, c.frr):
                w.writerow([f"{t:.6g}", c.name, f"{a:.6f}", f"{r:.6f}"])
        if average is not None:
            for a, r in zip(average.far, average.frr):
                w.writerow(["", "average", f"{a:.6f}", f"{r:.6f}"])


def read_roc_csv(path):
    """Inverse of ``write_roc_csv``: dict keyword -> (thresholds, far, frr) arrays."""
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            th, far, frr = out.setdefault(row["keyword"], ([], [], []))
            th.append(float(row["threshold"]) if row["threshold"] else np.nan)
            far.append(float(row["far"]))
            frr.append(float(row["frr"]))
    return {k: tuple(np.array(v) for v in vals) for k, vals in out.items()}
