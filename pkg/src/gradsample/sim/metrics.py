"""Pseudo-label precision/recall and per-class accuracy summaries."""
from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..thresholds import PseudoLabelSet


def pseudo_label_pr(pseudo: PseudoLabelSet, truth: np.ndarray, n: int):
    """Per-class precision and recall of pseudo labels against hidden truth.

    ``truth`` is the ``(images, proposals)`` true class array of the pool.
    Precision is NaN for classes with no pseudo labels; recall is NaN for
    classes absent from the pool.
    """
    truth = np.asarray(truth)
    predicted = np.bincount(pseudo.cls, minlength=n)[:n] if len(pseudo) else np.zeros(n, dtype=np.int64)
    if len(pseudo):
        hit = truth[pseudo.image, pseudo.proposal] == pseudo.cls
        correct = np.bincount(pseudo.cls[hit], minlength=n)[:n]
    else:
        correct = np.zeros(n, dtype=np.int64)
    actual = np.bincount(truth.reshape(-1), minlength=n + 1)[:n]
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, correct / np.maximum(predicted, 1), np.nan)
        recall = np.where(actual > 0, correct / np.maximum(actual, 1), np.nan)
    return precision, recall, predicted, correct, actual


def per_class_accuracy(predictions, labels, classes) -> np.ndarray:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = np.empty(len(classes))
    for i, c in enumerate(classes):
        mask = labels == c
        if not mask.any():
            raise InputError(f"evaluation set has no samples of class {c}")
        out[i] = np.mean(predictions[mask] == c)
    return out


def eval_balanced_accuracy(logits_fn, features, labels, majority, minority) -> dict:
    """Accuracy of argmax predictions per foreground class and by group.

    ``overall`` is accuracy over every foreground sample; ``balanced`` the mean
    of the per-class accuracies.
    """
    labels = np.asarray(labels)
    predictions = np.argmax(logits_fn(features), axis=1)
    classes = np.concatenate([majority, minority]).astype(np.int64)
    per_class = per_class_accuracy(predictions, labels, classes)
    fg = np.isin(labels, classes)
    return {
        "per_class": per_class,
        "overall": float(np.mean(predictions[fg] == labels[fg])),
        "balanced": float(per_class.mean()),
        "majority": float(per_class[: len(majority)].mean()) if len(majority) else float("nan"),
        "minority": float(per_class[len(majority):].mean()) if len(minority) else float("nan"),
    }


def nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    values = values[~np.isnan(values)]
    return float(values.mean()) if values.size else float("nan")
