"""
Evaluation metrics: balanced accuracy, support weighted F1 and ROC AUC.

Where a class is never predicted (or never correct) its F1 is taken as 0,
and the report lists such classes under "zero_division_classes".
"""

import numpy as np

from .errors import InputError


def _labels(y_true, y_pred, num_classes=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InputError(f"Label arrays must be equally long vectors, got {y_true.shape} and {y_pred.shape}")
    if y_true.size == 0:
        raise InputError("Can't compute metrics without samples")
    if num_classes is None:
        classes = np.unique(y_true)
    else:
        classes = np.arange(num_classes)
        missing = np.setdiff1d(classes, y_true)
        if missing.size:
            raise InputError(f"Class(es) {missing.tolist()} have no samples in y_true")
    return y_true, y_pred, classes


def confusion_matrix(y_true, y_pred, num_classes=None):
    "Rows are true classes, columns predicted classes."
    y_true, y_pred, _ = _labels(y_true, y_pred)
    size = num_classes or int(max(y_true.max(), y_pred.max())) + 1
    matrix = np.zeros((size, size), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def balanced_accuracy(y_true, y_pred, num_classes=None):
    "Mean recall over the classes."
    y_true, y_pred, classes = _labels(y_true, y_pred, num_classes)
    recalls = [np.mean(y_pred[y_true == c] == c) for c in classes]
    return float(np.mean(recalls))


def per_class_f1(y_true, y_pred, num_classes=None):
    "F1 and support per class, and the classes where precision + recall = 0."
    y_true, y_pred, classes = _labels(y_true, y_pred, num_classes)
    f1, support, zero_division = [], [], []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        predicted = np.sum(y_pred == c)
        actual = np.sum(y_true == c)
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        if precision + recall == 0:
            f1.append(0.0)
            zero_division.append(int(c))
        else:
            f1.append(2 * precision * recall / (precision + recall))
        support.append(actual)
    return np.array(f1), np.array(support), zero_division


def weighted_f1(y_true, y_pred, num_classes=None):
    f1, support, _ = per_class_f1(y_true, y_pred, num_classes)
    return float(np.sum(f1 * support) / np.sum(support))


def roc_auc(y_true, scores):
    """
    Probability that a random positive scores above a random negative, ties
    counting one half (the Mann-Whitney statistic).
    """
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.shape != scores.shape:
        raise InputError(f"Labels and scores differ in shape: {y_true.shape} vs {scores.shape}")
    positives = scores[y_true == 1]
    negatives = scores[y_true == 0]
    if positives.size == 0 or negatives.size == 0:
        raise InputError("ROC AUC needs both positive and negative samples")
    greater = np.sum(positives[:, np.newaxis] > negatives[np.newaxis, :])
    ties = np.sum(positives[:, np.newaxis] == negatives[np.newaxis, :])
    return float((greater + 0.5 * ties) / (positives.size * negatives.size))


def metrics_report(y_true, y_pred, scores=None, num_classes=2, all_classes=True):
    """
    Everything the eval command writes. `scores` are positive class
    probabilities; AUC is only reported for binary tasks. With `all_classes`
    every one of the `num_classes` classes must occur in y_true, otherwise
    only the classes present are scored.
    """
    present = num_classes if all_classes else None
    _, _, zero_division = per_class_f1(y_true, y_pred, present)
    report = {
        "n_samples": int(len(y_true)),
        "bacc": balanced_accuracy(y_true, y_pred, present),
        "weighted_f1": weighted_f1(y_true, y_pred, present),
        "confusion_matrix": confusion_matrix(y_true, y_pred, num_classes).tolist(),
        "zero_division_classes": zero_division,
    }
    if num_classes != 2:
        report["auc_note"] = f"AUC is only computed for binary tasks, this one has {num_classes} classes"
    elif scores is None:
        report["auc_note"] = "No scores available"
    elif len(np.unique(y_true)) < 2:
        report["auc_note"] = "AUC needs both classes in the evaluated split"
    else:
        report["auc"] = roc_auc(y_true, scores)
    return report


def metrics_by_length(y_true, y_pred, lengths, edges, scores=None, num_classes=2):
    """
    Reports for bags grouped by their number of instances. `edges` are the
    lower bounds of the bins, e.g. [0, 5000, 10000, 15000]; the last bin is
    open ended. Empty bins are left out. A bin may well hold bags of a
    single class, so bins are scored over the classes they contain.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    lengths = np.asarray(lengths)
    scores = None if scores is None else np.asarray(scores)
    edges = sorted(edges)
    bins = []
    for i, low in enumerate(edges):
        high = edges[i + 1] if i + 1 < len(edges) else None
        mask = (lengths >= low) if high is None else (lengths >= low) & (lengths < high)
        if not mask.any():
            continue
        report = metrics_report(y_true[mask], y_pred[mask],
                                None if scores is None else scores[mask], num_classes,
                                all_classes=False)
        report["min_tokens"] = int(low)
        report["max_tokens"] = None if high is None else int(high) - 1
        bins.append(report)
    return bins


def summarize(values):
    "Mean and (population) standard deviation over repeated runs."
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("Nothing to summarize")
    return {"mean": float(values.mean()), "std": float(values.std()), "n": int(values.size)}
