"""Activity-level predictions by majority vote over tumbling windows of frames."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import WindowTooSmall
from ..features import HOP_S
from .dataset import SpecDataset
from .metrics import TARGET_CLASSES, confusion_matrix, macro_f1


@dataclass(frozen=True)
class AggregationConfig:
    window_s: float = 30.0
    hop_s: float = HOP_S

    @property
    def frames_per_window(self) -> int:
        return int(math.floor(self.window_s / self.hop_s + 1e-9))

    def check(self) -> None:
        if self.frames_per_window < 2:
            raise WindowTooSmall(
                f"{self.window_s} s covers {self.frames_per_window} frame(s) at a "
                f"{self.hop_s} s hop; need at least 2")

    def window_count(self, n_frames: int) -> int:
        return int(math.floor(n_frames * self.hop_s / self.window_s + 1e-9))


def majority(votes, n_classes: int | None = None) -> int:
    """Most frequent class; ties go to the lowest class index."""
    votes = np.asarray(votes, dtype=np.int64)
    return int(np.bincount(votes, minlength=n_classes or 0).argmax())


def aggregate_activity(frame_preds, cfg: AggregationConfig,
                       frame_labels=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Collapse one contiguous, time-ordered run of frame predictions into
    window-level predictions.

    Window ``w`` covers frames ``[w*m, (w+1)*m)`` with ``m`` frames per window;
    the leftover tail is dropped. With ``frame_labels`` the windows' majority
    ground truth is returned as well.
    """
    cfg.check()
    preds = np.asarray(frame_preds, dtype=np.int64)
    m = cfg.frames_per_window
    n_win = cfg.window_count(len(preds))
    win_pred = np.array([majority(preds[w * m:(w + 1) * m]) for w in range(n_win)], np.int64)
    if frame_labels is None:
        return win_pred, None
    labels = np.asarray(frame_labels, dtype=np.int64)
    win_true = np.array([majority(labels[w * m:(w + 1) * m]) for w in range(n_win)], np.int64)
    return win_pred, win_true


def _runs(data: SpecDataset):
    """Index arrays of each (segment, location) run, sorted by start time."""
    keys = np.array([f"{s}|{loc}" for s, loc in zip(data.segments, data.locations)])
    for key in sorted(set(keys.tolist())):
        idx = np.flatnonzero(keys == key)
        yield key, idx[np.argsort(data.frame_start[idx], kind="stable")]


def activity_windows(data: SpecDataset, frame_preds, cfg: AggregationConfig):
    """Window predictions, window truths and window locations for a dataset
    featurised at the full hop (no frame stride)."""
    cfg.check()
    frame_preds = np.asarray(frame_preds)
    preds, truth, locs = [], [], []
    for _, idx in _runs(data):
        p, t = aggregate_activity(frame_preds[idx], cfg, data.labels[idx])
        preds.append(p)
        truth.append(t)
        locs.append(np.full(len(p), data.locations[idx[0]]))
    if not preds:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, dtype="<U1")
    return np.concatenate(preds), np.concatenate(truth), np.concatenate(locs)


def activity_f1(data: SpecDataset, frame_preds, cfg: AggregationConfig,
                n_classes: int = 4, classes=TARGET_CLASSES) -> dict[str, float]:
    """Per-location window-level macro F1 (percent) plus their mean under
    the key ``"average"``."""
    preds, truth, locs = activity_windows(data, frame_preds, cfg)
    out = {}
    for loc in sorted(set(locs.tolist())):
        mask = locs == loc
        out[loc] = 100.0 * macro_f1(confusion_matrix(truth[mask], preds[mask], n_classes), classes)
    out["average"] = float(np.mean(list(out.values()))) if out else 0.0
    return out


def frame_f1(data: SpecDataset, frame_preds, n_classes: int = 4,
             classes=TARGET_CLASSES) -> dict[str, float]:
    """Per-location frame-level macro F1 (percent) with the same layout."""
    frame_preds = np.asarray(frame_preds)
    out = {}
    for loc in sorted(set(data.locations.tolist())):
        mask = data.locations == loc
        cm = confusion_matrix(data.labels[mask], frame_preds[mask], n_classes)
        out[loc] = 100.0 * macro_f1(cm, classes)
    out["average"] = float(np.mean(list(out.values()))) if out else 0.0
    return out


def aggregation_curve(data: SpecDataset, frame_preds, windows=(10, 20, 30, 40, 50),
                      n_classes: int = 4, classes=TARGET_CLASSES) -> list[dict]:
    """Activity-level F1 per location for each window length (rows of
    ``aggregation_curve.csv``)."""
    rows = []
    for w in windows:
        scores = activity_f1(data, frame_preds, AggregationConfig(float(w)), n_classes, classes)
        rows.append({"window_s": float(w), **scores})
    return rows
