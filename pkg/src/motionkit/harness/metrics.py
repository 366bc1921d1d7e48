"""Confusion matrices and macro F1."""

from __future__ import annotations

import numpy as np

TARGET_CLASSES = (0, 1, 2)  # walking, running, cycling; "other" is the null class


def confusion_matrix(y_true, y_pred, n_classes: int = 4) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm) -> np.ndarray:
    """F1 = 2TP / (2TP + FP + FN); classes absent from both truth and
    predictions score 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm, classes=TARGET_CLASSES) -> float:
    """Unweighted mean of per-class F1 over ``classes``, as a fraction.

    ``classes=None`` averages over every class in the matrix.
    """
    f1 = per_class_f1(cm)
    if classes is None:
        classes = range(len(f1))
    return float(np.mean([f1[c] for c in classes]))


def macro_f1_percent(y_true, y_pred, n_classes: int = 4, include_other: bool = False) -> float:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    return 100.0 * macro_f1(cm, None if include_other else TARGET_CLASSES)
