"""Classification metrics and the front-task agreement rule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def confusion_matrix(preds, truth, num_classes: int) -> np.ndarray:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise DataError("predictions and truth must be equal-length vectors")
    if len(preds) == 0:
        raise DataError("empty prediction vector")
    if max(preds.max(), truth.max()) >= num_classes or min(preds.min(), truth.min()) < 0:
        raise DataError("label outside [0, num_classes)")
    cm = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(cm, (truth, preds), 1)
    return cm


def per_class_prf(preds, truth, num_classes: int):
    """Per-class precision, recall, F1. A class with no predictions and no
    instances scores zero on all three."""
    cm = confusion_matrix(preds, truth, num_classes)
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    actual = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def f1_macro(preds, truth, num_classes: int) -> float:
    """Unweighted mean of per-class F1 scores."""
    _, _, f1 = per_class_prf(preds, truth, num_classes)
    return float(f1.mean())


def accuracy(preds, truth) -> float:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if len(preds) == 0:
        raise DataError("empty prediction vector")
    return float((preds == truth).mean())


def average_precision(scores, truth) -> float:
    """Area under the precision-recall curve as the step-wise sum over
    descending score thresholds, with tied scores grouped."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 1 or len(scores) == 0:
        raise DataError("scores and truth must be equal-length nonempty vectors")
    n_pos = int((truth == 1).sum())
    if n_pos == 0:
        raise DataError("average precision needs at least one positive")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t == 1)
    fp = np.cumsum(t != 1)
    # keep only the last row of each tied-score group
    last = np.flatnonzero(np.diff(s, append=-np.inf) != 0)
    tp = tp[last].astype(float)
    fp = fp[last].astype(float)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def agreement_predict(logits_view_a, logits_view_b) -> int | None:
    """Front-task agreement rule for one tablet.

    View A is the capture as stored; view B is its 180-degree x-rotation.
    A correct model labels the two views oppositely, so the views agree
    when B predicts the flip of A's prediction. Returns A's label on
    agreement, None (abstain) otherwise.
    """
    a = int(np.argmax(np.asarray(logits_view_a).ravel()))
    b = int(np.argmax(np.asarray(logits_view_b).ravel()))
    return a if b == 1 - a else None


@dataclass
class EvalReport:
    task: str
    num_classes: int
    precision: list
    recall: list
    f1: list
    macro_f1: float
    accuracy: float
    confusion: list
    average_precision: float | None = None
    coverage: float | None = None
    agreement_precision: float | None = None
    records: list = field(default_factory=list)  # per-instance dicts
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "num_classes": self.num_classes,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
            "average_precision": self.average_precision,
            "coverage": self.coverage,
            "agreement_precision": self.agreement_precision,
            "records": self.records,
            "extra": self.extra,
        }


def build_report(task: str, preds, truth, num_classes: int,
                 scores=None, records=None) -> EvalReport:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    precision, recall, f1 = per_class_prf(preds, truth, num_classes)
    cm = confusion_matrix(preds, truth, num_classes)
    ap = None
    if scores is not None and num_classes == 2 and (truth == 1).any():
        ap = average_precision(np.asarray(scores), truth)
    return EvalReport(
        task=task, num_classes=num_classes,
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        f1=[float(v) for v in f1],
        macro_f1=float(f1.mean()),
        accuracy=accuracy(preds, truth),
        confusion=cm.tolist(),
        average_precision=ap,
        records=list(records) if records is not None else [],
    )
