"""Classification metrics: confusion counts, ROC/AUC, and error statistics
over continuous susceptibility predictions.

Conventions fixed here: a prediction is positive when y_hat >= threshold;
tied ROC scores collapse into a single step, which makes the trapezoidal
AUC exactly the Mann-Whitney statistic with half credit for ties; ratios
with zero denominators are reported as None rather than coerced to 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

HISTOGRAM_BINS = 40
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def _check_input(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("evaluation input is empty")
    if y.size != y_hat.size:
        raise ValueError(f"{y.size} labels but {y_hat.size} predictions")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(y_hat).all():
        raise ValueError("predictions contain non-finite values")
    if y_hat.min() < 0.0 or y_hat.max() > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    return y.astype(np.int64), y_hat


def confusion(y, y_hat, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Tally predictions against labels; y_hat >= threshold counts positive."""
    y, y_hat = _check_input(y, y_hat)
    pred = y_hat >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(c: ConfusionCounts) -> dict:
    """Accuracy, precision, recall, specificity, and F1 from the counts.
    Any 0/0 ratio comes back as None, which is not the same thing as 0."""
    if c.total < 1:
        raise ValueError("empty confusion counts")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None or precision + recall == 0.0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "f1": f1,
    }


def roc_auc(y, y_hat) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points (fpr, tpr, threshold) and the trapezoidal AUC.

    The threshold sweeps the distinct scores in descending order; samples
    tied at one score enter together as one step. The first point is
    (0, 0) at threshold +inf.
    """
    y, y_hat = _check_input(y, y_hat)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-y_hat, kind="stable")
    ys = y[order]
    ss = y_hat[order]
    points = [(0.0, 0.0, math.inf)]
    auc = 0.0
    tp = fp = 0
    i = 0
    while i < ys.size:
        j = i
        while j < ys.size and ss[j] == ss[i]:
            j += 1
        tp += int(np.count_nonzero(ys[i:j] == 1))
        fp += (j - i) - int(np.count_nonzero(ys[i:j] == 1))
        fpr, tpr = fp / n_neg, tp / n_pos
        prev_fpr, prev_tpr, _ = points[-1]
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((fpr, tpr, float(ss[i])))
        i = j
    return points, auc


def error_stats(y, y_hat) -> tuple[float, float, list[int]]:
    """MAE, RMSE, and a 40-bin histogram of the errors e = y - y_hat over
    [-1, 1]; a value on a bin boundary belongs to the lower bin."""
    y, y_hat = _check_input(y, y_hat)
    e = y - y_hat
    mae = float(np.abs(e).mean())
    rmse = float(math.sqrt((e * e).mean()))
    edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
    idx = np.clip(np.searchsorted(edges, e, side="left") - 1, 0, HISTOGRAM_BINS - 1)
    hist = np.bincount(idx, minlength=HISTOGRAM_BINS)
    return mae, rmse, [int(c) for c in hist]


@dataclass
class MetricReport:
    n: int
    threshold: float
    counts: ConfusionCounts
    accuracy: float | None
    precision: float | None
    recall: float | None
    specificity: float | None
    f1: float | None
    auc: float
    roc: list[tuple[float, float, float]]
    mae: float
    rmse: float
    histogram: list[int]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "threshold": self.threshold,
            "counts": self.counts.to_dict(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "specificity": self.specificity,
            "f1": self.f1,
            "auc": self.auc,
            "roc": [[fpr, tpr, None if math.isinf(t) else t] for fpr, tpr, t in self.roc],
            "mae": self.mae,
            "rmse": self.rmse,
            "histogram": self.histogram,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            n=int(d["n"]),
            threshold=float(d["threshold"]),
            counts=ConfusionCounts(**d["counts"]),
            accuracy=d["accuracy"],
            precision=d["precision"],
            recall=d["recall"],
            specificity=d["specificity"],
            f1=d["f1"],
            auc=float(d["auc"]),
            roc=[(p[0], p[1], math.inf if p[2] is None else p[2]) for p in d["roc"]],
            mae=float(d["mae"]),
            rmse=float(d["rmse"]),
            histogram=[int(c) for c in d["histogram"]],
        )


def evaluate(y, y_hat, threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    """One-stop evaluation: confusion metrics at the threshold, the ROC
    curve with AUC, and the error statistics."""
    y_arr, _ = _check_input(y, y_hat)
    c = confusion(y, y_hat, threshold)
    m = metrics(c)
    roc, auc = roc_auc(y, y_hat)
    mae, rmse, hist = error_stats(y, y_hat)
    return MetricReport(
        n=int(y_arr.size),
        threshold=threshold,
        counts=c,
        accuracy=m["accuracy"],
        precision=m["precision"],
        recall=m["recall"],
        specificity=m["specificity"],
        f1=m["f1"],
        auc=auc,
        roc=roc,
        mae=mae,
        rmse=rmse,
        histogram=hist,
    )


def roc_to_csv(points: list[tuple[float, float, float]]) -> str:
    lines = ["fpr,tpr,threshold"]
    for fpr, tpr, t in points:
        t_str = "inf" if math.isinf(t) else repr(float(t))
        lines.append(f"{fpr!r},{tpr!r},{t_str}")
    return "\n".join(lines) + "\n"


def roc_svg(points: list[tuple[float, float, float]], auc: float) -> str:
    """Standalone SVG of the ROC curve: unit axes, dashed diagonal
    reference, and the AUC printed in the lower right."""
    size, m = 480, 56  # canvas and margin
    span = size - 2 * m

    def px(fpr):
        return m + fpr * span

    def py(tpr):
        return size - m - tpr * span

    path = " ".join(f"{px(fpr):.2f},{py(tpr):.2f}" for fpr, tpr, _ in points)
    ticks = []
    for v in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        x, y = px(v), py(v)
        ticks.append(f'<line x1="{x:.2f}" y1="{size - m}" x2="{x:.2f}" y2="{size - m + 5}" stroke="black"/>')
        ticks.append(f'<text x="{x:.2f}" y="{size - m + 18}" font-size="11" text-anchor="middle">{v:.1f}</text>')
        ticks.append(f'<line x1="{m - 5}" y1="{y:.2f}" x2="{m}" y2="{y:.2f}" stroke="black"/>')
        ticks.append(f'<text x="{m - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{v:.1f}</text>')
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{px(0):.2f}" y1="{py(0):.2f}" x2="{px(1):.2f}" y2="{py(1):.2f}" '
        'stroke="gray" stroke-dasharray="6,4"/>',
        *ticks,
        f'<polyline points="{path}" fill="none" stroke="#1f6fb2" stroke-width="2"/>',
        f'<text x="{px(0.62):.2f}" y="{py(0.08):.2f}" font-size="15">AUC = {auc:.4f}</text>',
        f'<text x="{size / 2:.0f}" y="{size - 10}" font-size="13" text-anchor="middle">False positive rate</text>',
        f'<text x="14" y="{size / 2:.0f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2:.0f})">True positive rate</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
