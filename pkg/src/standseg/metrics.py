"""Confusion-matrix evaluation: OA, macro MCC / IoU / F1 / UA / PA, agreement.

Rows of the confusion matrix are the reference class, columns the predicted
class. Per-class values use one-vs-rest marginals; a class whose denominator
is zero contributes 0 to the macro mean but still counts in the divisor, so
every metric is total over all matrices with at least one counted pixel.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError

MACRO_KINDS = ("miou", "mf1", "mua", "mpa")


@dataclass(eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (c, c) int64, rows = reference, cols = prediction

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def transposed(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.T.copy())

    def marginals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-class one-vs-rest (TP, FP, FN, TN) as float64 vectors."""
        counts = self.counts.astype(np.float64)
        tp = np.diag(counts)
        fn = counts.sum(axis=1) - tp  # reference i, predicted elsewhere
        fp = counts.sum(axis=0) - tp
        tn = counts.sum() - tp - fn - fp
        return tp, fp, fn, tn


def confusion(
    pred: np.ndarray,
    ref: np.ndarray,
    n_classes: int,
    mask: np.ndarray | None = None,
) -> ConfusionMatrix:
    """Count valid pixels into an (n_classes, n_classes) ref-by-pred matrix."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != ref.shape:
            raise ShapeError(f"mask shape {mask.shape} != mask target shape {ref.shape}")
        pred = pred[mask]
        ref = ref[mask]
    pred = pred.ravel().astype(np.int64)
    ref = ref.ravel().astype(np.int64)
    for name, values in (("prediction", pred), ("reference", ref)):
        if values.size and (values.min() < 0 or values.max() >= n_classes):
            raise ValueError(f"{name} holds class codes outside [0, {n_classes})")
    flat = np.bincount(ref * n_classes + pred, minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise UndefinedMetricError("overall accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def per_class_mcc(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn, tn = cm.marginals()
    denom = np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    out = np.zeros(cm.n_classes, dtype=np.float64)
    ok = denom > 0
    out[ok] = (tp[ok] * tn[ok] - fp[ok] * fn[ok]) / denom[ok]
    return out


def macro_mcc(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("macro MCC of an empty confusion matrix")
    return float(per_class_mcc(cm).mean())


def per_class_metric(cm: ConfusionMatrix, which: str) -> np.ndarray:
    tp, fp, fn, _ = cm.marginals()
    if which == "miou":
        denom = tp + fp + fn
        numer = tp
    elif which == "mf1":
        denom = 2.0 * tp + fp + fn
        numer = 2.0 * tp
    elif which == "mua":
        denom = tp + fp
        numer = tp
    elif which == "mpa":
        denom = tp + fn
        numer = tp
    else:
        raise ValueError(f"which must be one of {MACRO_KINDS}, got {which!r}")
    out = np.zeros(cm.n_classes, dtype=np.float64)
    ok = denom > 0
    out[ok] = numer[ok] / denom[ok]
    return out


def macro_metric(cm: ConfusionMatrix, which: str) -> float:
    if cm.total == 0:
        raise UndefinedMetricError(f"{which} of an empty confusion matrix")
    return float(per_class_metric(cm, which).mean())


@dataclass(eq=False)
class MetricReport:
    reference: str
    prediction: str
    oa: float
    mmcc: float
    miou: float
    mf1: float
    mua: float
    mpa: float
    per_class: dict[int, dict[str, float]]


def evaluate(cm: ConfusionMatrix, reference: str = "reference", prediction: str = "prediction") -> MetricReport:
    """Full metric report for one confusion matrix."""
    mcc = per_class_mcc(cm)
    iou = per_class_metric(cm, "miou")
    f1 = per_class_metric(cm, "mf1")
    ua = per_class_metric(cm, "mua")
    pa = per_class_metric(cm, "mpa")
    per_class = {
        i: {
            "mcc": float(mcc[i]),
            "iou": float(iou[i]),
            "f1": float(f1[i]),
            "ua": float(ua[i]),
            "pa": float(pa[i]),
        }
        for i in range(cm.n_classes)
    }
    return MetricReport(
        reference=reference,
        prediction=prediction,
        oa=overall_accuracy(cm),
        mmcc=float(mcc.mean()),
        miou=float(iou.mean()),
        mf1=float(f1.mean()),
        mua=float(ua.mean()),
        mpa=float(pa.mean()),
        per_class=per_class,
    )


def agreement(
    pred_a: np.ndarray,
    pred_b: np.ndarray,
    n_classes: int,
    mask: np.ndarray | None = None,
    label_a: str = "model_a",
    label_b: str = "model_b",
) -> MetricReport:
    """Pairwise inter-model agreement: A plays the reference, B the prediction.

    Swapping the arguments transposes the matrix, so OA is symmetric and
    the UA/PA pair trade places.
    """
    cm = confusion(pred_b, pred_a, n_classes, mask)
    return evaluate(cm, reference=label_a, prediction=label_b)


def report_to_json(report: MetricReport) -> dict:
    return {
        "oa": report.oa,
        "mmcc": report.mmcc,
        "miou": report.miou,
        "mf1": report.mf1,
        "mua": report.mua,
        "mpa": report.mpa,
        "per_class": {str(i): dict(v) for i, v in report.per_class.items()},
        "reference": report.reference,
        "prediction": report.prediction,
    }


def report_from_json(doc: dict) -> MetricReport:
    return MetricReport(
        reference=doc["reference"],
        prediction=doc["prediction"],
        oa=float(doc["oa"]),
        mmcc=float(doc["mmcc"]),
        miou=float(doc["miou"]),
        mf1=float(doc["mf1"]),
        mua=float(doc["mua"]),
        mpa=float(doc["mpa"]),
        per_class={int(k): {m: float(x) for m, x in v.items()} for k, v in doc["per_class"].items()},
    )


def reports_to_csv(reports: list[MetricReport]) -> str:
    """Flat one-row-per-report table: labels, then the six summary metrics."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["reference", "prediction", "oa", "mmcc", "miou", "mf1", "mua", "mpa"])
    for r in reports:
        writer.writerow(
            [r.reference, r.prediction]
            + [f"{v:.6f}" for v in (r.oa, r.mmcc, r.miou, r.mf1, r.mua, r.mpa)]
        )
    return buf.getvalue()


def mean_of(reports: list[MetricReport], attr: str) -> float:
    if not reports:
        raise UndefinedMetricError("mean over an empty report list")
    return math.fsum(getattr(r, attr) for r in reports) / len(reports)
