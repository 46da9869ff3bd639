"""Classification metrics: confusion matrix, per-class precision/recall/F1
with support-weighted aggregates, micro-average ROC/AUC, and the full
evaluation report with its on-disk text/CSV form."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DomainDataset, NormStats, normalize_values
from .model import ModelConfig, ModelParams, predict


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    """Entry (i, j) counts samples with true class i predicted as j."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape or true.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {true.shape} vs {pred.shape}")
    if true.size and (max(true.max(), pred.max()) >= num_classes or min(true.min(), pred.min()) < 0):
        raise ValueError(f"label out of range [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class PrfSummary:
    per_class: tuple[ClassMetrics, ...]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float


def precision_recall_f1(confusion) -> PrfSummary:
    """Per-class precision/recall/F1 from a confusion matrix; 0/0 cells are
    defined as 0. Aggregates weight each class by its true-sample count."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    diag = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / np.where(col > 0, col, 1), 0.0)
        recall = np.where(row > 0, diag / np.where(row > 0, row, 1), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1), 0.0)
    total = cm.sum()
    weight = row / total if total > 0 else row
    per_class = tuple(
        ClassMetrics(float(p), float(r), float(f), int(s))
        for p, r, f, s in zip(precision, recall, f1, row)
    )
    return PrfSummary(
        per_class=per_class,
        weighted_precision=float(np.sum(weight * precision)),
        weighted_recall=float(np.sum(weight * recall)),
        weighted_f1=float(np.sum(weight * f1)),
        accuracy=float(diag.sum() / total) if total > 0 else 0.0,
    )


def weighted_f1_score(true, pred, num_classes: int) -> float:
    return precision_recall_f1(confusion_matrix(true, pred, num_classes)).weighted_f1


def micro_roc_auc(class_probs, labels):
    """Micro-average ROC: pool every (sample, class) decision one-vs-rest,
    rank by predicted probability, sweep thresholds (ties share a step), and
    integrate by the trapezoid rule. Returns (points (m, 2) of (fpr, tpr),
    auc)."""
    probs = np.asarray(class_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise ValueError("class probabilities must be (n, num_classes)")
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if (not np.all(np.isfinite(probs)) or probs.min() < -1e-9
            or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6):
        raise ValueError("rows must be probability vectors")
    truth = np.zeros((n, c), dtype=bool)
    truth[np.arange(n), labels] = True
    scores = probs.ravel()
    truth = truth.ravel()
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    truth = truth[order]
    pos = truth.sum()
    neg = truth.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("need both positive and negative pooled decisions")
    tp = np.cumsum(truth)
    fp = np.cumsum(~truth)
    last = np.flatnonzero(np.diff(scores, append=np.nan) != 0)  # end of each tie block
    tpr = np.concatenate([[0.0], tp[last] / pos])
    fpr = np.concatenate([[0.0], fp[last] / neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return np.column_stack([fpr, tpr]), auc


@dataclass(eq=False)
class EvalReport:
    weighted_f1: float
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    per_class: tuple[ClassMetrics, ...]
    confusion: np.ndarray
    roc_points: np.ndarray
    auc: float
    num_windows: int

    def save(self, directory) -> Path:
        """Write eval_report.txt (key=value, fixed key order), confusion.csv,
        and roc.csv under ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [
            f"num_windows={self.num_windows}",
            f"accuracy={self.accuracy!r}",
            f"weighted_f1={self.weighted_f1!r}",
            f"weighted_precision={self.weighted_precision!r}",
            f"weighted_recall={self.weighted_recall!r}",
            f"auc={self.auc!r}",
        ]
        for i, m in enumerate(self.per_class):
            lines.append(
                f"class.{i}={m.precision!r},{m.recall!r},{m.f1!r},{m.support}"
            )
        (directory / "eval_report.txt").write_text("\n".join(lines) + "\n")
        np.savetxt(directory / "confusion.csv", self.confusion, fmt="%d", delimiter=",")
        np.savetxt(directory / "roc.csv", self.roc_points, delimiter=",",
                   header="fpr,tpr", comments="")
        return directory


def load_eval_report(directory) -> EvalReport:
    directory = Path(directory)
    fields: dict[str, str] = {}
    per_class = []
    for line in (directory / "eval_report.txt").read_text().splitlines():
        key, _, value = line.partition("=")
        if key.startswith("class."):
            p, r, f, s = value.split(",")
            per_class.append(ClassMetrics(float(p), float(r), float(f), int(s)))
        else:
            fields[key] = value
    confusion = np.loadtxt(directory / "confusion.csv", delimiter=",", dtype=np.int64, ndmin=2)
    roc = np.loadtxt(directory / "roc.csv", delimiter=",", skiprows=1, ndmin=2)
    return EvalReport(
        weighted_f1=float(fields["weighted_f1"]),
        accuracy=float(fields["accuracy"]),
        weighted_precision=float(fields["weighted_precision"]),
        weighted_recall=float(fields["weighted_recall"]),
        per_class=tuple(per_class),
        confusion=confusion,
        roc_points=roc,
        auc=float(fields["auc"]),
        num_windows=int(fields["num_windows"]),
    )


def evaluate(params: ModelParams, cfg: ModelConfig, dataset: DomainDataset,
             stats: NormStats) -> EvalReport:
    """Normalize with the training statistics, predict, and assemble every
    reported metric."""
    values = normalize_values(dataset.values, stats)
    preds, probs, _ = predict(params, cfg, values)
    cm = confusion_matrix(dataset.activities, preds, cfg.num_classes)
    prf = precision_recall_f1(cm)
    roc, auc = micro_roc_auc(probs, dataset.activities)
    return EvalReport(
        weighted_f1=prf.weighted_f1,
        accuracy=prf.accuracy,
        weighted_precision=prf.weighted_precision,
        weighted_recall=prf.weighted_recall,
        per_class=prf.per_class,
        confusion=cm,
        roc_points=roc,
        auc=auc,
        num_windows=len(dataset),
    )
