"""Classification metrics: balanced accuracy, Cohen's kappa, weighted F1, AUROC, AUC-PR."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import UndefinedMetricError


@dataclasses.dataclass
class MetricBundle:
    balanced_accuracy: float
    cohen_kappa: float
    weighted_f1: float
    auroc: float
    auc_pr: float

    def as_dict(self):
        return dataclasses.asdict(self)

    def is_valid(self):
        vals = self.as_dict()
        ok = all(np.isfinite(v) for v in vals.values())
        ok &= -1.0 <= self.cohen_kappa <= 1.0
        ok &= all(0.0 <= vals[k] <= 1.0 for k in vals if k != "cohen_kappa")
        return bool(ok)


def confusion_matrix(labels, preds, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def balanced_accuracy(labels, preds, num_classes=None):
    """Mean recall over the classes present in ``labels``."""
    labels, preds = np.asarray(labels), np.asarray(preds)
    k = num_classes or int(max(labels.max(), preds.max())) + 1
    cm = confusion_matrix(labels, preds, k)
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def cohen_kappa(labels, preds, num_classes=None):
    labels, preds = np.asarray(labels), np.asarray(preds)
    k = num_classes or int(max(labels.max(), preds.max())) + 1
    cm = confusion_matrix(labels, preds, k).astype(np.float64)
    n = cm.sum()
    po = np.trace(cm) / n
    pe = float(cm.sum(axis=1) @ cm.sum(axis=0)) / (n * n)
    if pe == 1.0:
        raise UndefinedMetricError("kappa undefined when chance agreement is 1")
    return float((po - pe) / (1.0 - pe))


def weighted_f1(labels, preds, num_classes=None):
    labels, preds = np.asarray(labels), np.asarray(preds)
    k = num_classes or int(max(labels.max(), preds.max())) + 1
    cm = confusion_matrix(labels, preds, k).astype(np.float64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float((f1 * support).sum() / support.sum())


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auroc(y, score):
    """Mann-Whitney rank statistic; ties count one half."""
    y = np.asarray(y).astype(bool)
    score = np.asarray(score, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative samples")
    ranks = _average_ranks(score)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def binary_auc_pr(y, score):
    """Average precision: step interpolation over distinct score thresholds."""
    y = np.asarray(y).astype(bool)
    score = np.asarray(score, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive sample")
    order = np.argsort(-score, kind="mergesort")
    s, t = score[order], y[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def _one_vs_rest(fn, labels, scores):
    vals = []
    for k in range(scores.shape[1]):
        yk = labels == k
        if yk.all() or not yk.any():
            continue
        vals.append(fn(yk, scores[:, k]))
    if not vals:
        raise UndefinedMetricError("no class has both positive and negative samples")
    return float(np.mean(vals))


def compute_metrics(labels, scores):
    """Metrics from integer labels and scores.

    ``scores`` is either ``[N]`` positive-class scores (binary; threshold 0.5)
    or ``[N, K]`` per-class probabilities (argmax decision). Multi-class
    AUROC/AUC-PR are one-vs-rest macro averages.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise UndefinedMetricError("metrics need at least two classes in the labels")
    if scores.ndim == 1:
        preds = (scores >= 0.5).astype(np.int64)
        k = 2
        auroc = binary_auroc(labels == 1, scores)
        aucpr = binary_auc_pr(labels == 1, scores)
    else:
        k = scores.shape[1]
        preds = np.argmax(scores, axis=1)
        if k == 2:
            auroc = binary_auroc(labels == 1, scores[:, 1])
            aucpr = binary_auc_pr(labels == 1, scores[:, 1])
        else:
            auroc = _one_vs_rest(binary_auroc, labels, scores)
            aucpr = _one_vs_rest(binary_auc_pr, labels, scores)
    return MetricBundle(
        balanced_accuracy=balanced_accuracy(labels, preds, k),
        cohen_kappa=cohen_kappa(labels, preds, k),
        weighted_f1=weighted_f1(labels, preds, k),
        auroc=auroc,
        auc_pr=aucpr,
    )


def multilabel_auroc(targets, scores):
    """Macro AUROC over label columns that contain both outcomes."""
    targets = np.asarray(targets).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    vals = [binary_auroc(targets[:, k], scores[:, k])
            for k in range(targets.shape[1]) if 0 < targets[:, k].sum() < len(targets)]
    if not vals:
        raise UndefinedMetricError("no label column has both outcomes")
    return float(np.mean(vals))
