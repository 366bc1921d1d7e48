"""Cross-location transfer matrices, EigenLocation search and report files."""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import MissingLocation
from ..ingest import BASE_LOCATIONS, CLASS_NAMES
from .dataset import SpecDataset
from .metrics import confusion_matrix, macro_f1
from .train import MotionModel, TrainConfig, evaluate, predict, train_motion_model

log = logging.getLogger(__name__)

# Reference figures measured on real-world recordings. They are not
# reproducible here and only annotate report templates.
REFERENCE_FIGURES = {
    "wrist_on_ankle_f1": 23.28,
    "all_locations_row_average_f1": 91.41,
    "best_triple": (("Ankle", "Thigh", "Shoulder"), 90.05),
    "best_double": (("Thigh", "Shoulder"), 85.24),
    "activity_level_f1_30s": 95.17,
    "viable_synthesis_pair_f1_min": 82.0,
    "finetune_pseudo_activity_f1": 85.93,
}


def set_name(locations: Sequence[str]) -> str:
    return "+".join(locations)


@dataclass
class TransferReport:
    """Rows are training location sets, columns evaluation locations; cells
    hold frame-level macro F1 in percent."""

    row_sets: list[tuple[str, ...]]
    columns: list[str]
    f1: np.ndarray  # (rows, cols)
    confusion: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    models: list[MotionModel] = field(default_factory=list, repr=False)
    macro_classes: tuple[int, ...] | None = (0, 1, 2)

    @property
    def row_average(self) -> np.ndarray:
        return self.f1.mean(axis=1)

    def cell(self, row: Sequence[str] | str, col: str) -> float:
        row = (row,) if isinstance(row, str) else tuple(row)
        return float(self.f1[self.row_sets.index(row), self.columns.index(col)])

    def recomputed(self, r: int, col: str) -> float:
        return 100.0 * macro_f1(self.confusion[(r, col)], self.macro_classes)

    def diagonal_dominance(self) -> dict[str, tuple[bool, bool]]:
        """For each single-location row L: (own >= mean(cross), own > min(cross))."""
        out = {}
        for r, rs in enumerate(self.row_sets):
            if len(rs) != 1 or rs[0] not in self.columns:
                continue
            c = self.columns.index(rs[0])
            own = self.f1[r, c]
            cross = np.delete(self.f1[r], c)
            out[rs[0]] = (bool(own >= cross.mean()), bool(own > cross.min()))
        return out

    # -- reports -----------------------------------------------------------

    def write(self, out_dir, svg: bool = False) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "transfer_matrix.csv"]
        with open(paths[0], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["train_set"] + self.columns + ["average"])
            for r, rs in enumerate(self.row_sets):
                w.writerow([set_name(rs)] + [f"{v:.2f}" for v in self.f1[r]]
                           + [f"{self.row_average[r]:.2f}"])
        for (r, col), cm in sorted(self.confusion.items()):
            stem = f"confusion_{set_name(self.row_sets[r])}_{col}"
            paths.append(write_confusion(cm, out / f"{stem}.csv"))
            if svg:
                paths.append(write_confusion_svg(cm, out / f"{stem}.svg",
                                                 f"{set_name(self.row_sets[r])} on {col}"))
        return paths


def write_confusion(cm: np.ndarray, path) -> Path:
    names = list(CLASS_NAMES[: cm.shape[0]]) + [str(i) for i in range(len(CLASS_NAMES), cm.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, cm):
            w.writerow([name] + [int(v) for v in row])
    return Path(path)


def write_confusion_svg(cm: np.ndarray, path, title: str = "") -> Path:
    """Row-normalised confusion heatmap as a small standalone SVG."""
    cell, left, top = 60, 80, 40
    n = cm.shape[0]
    names = list(CLASS_NAMES[:n]) + [str(i) for i in range(len(CLASS_NAMES), n)]
    rows = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    width, height = left + n * cell + 10, top + n * cell + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="{left}" y="14">{title}</text>']
    for i in range(n):
        y = top + i * cell
        parts.append(f'<text x="4" y="{y + cell // 2 + 4}">{names[i]}</text>')
        parts.append(f'<text x="{left + i * cell + 4}" y="{top - 6}">{names[i]}</text>')
        for j in range(n):
            shade = int(255 * (1 - rows[i, j]))
            x = left + j * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)" stroke="#888"/>')
            parts.append(f'<text x="{x + 8}" y="{y + cell // 2 + 4}">{int(cm[i, j])}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    return Path(path)


def _check_locations(data: SpecDataset, wanted, what: str) -> None:
    present = set(data.locations.tolist())
    missing = sorted(set(wanted) - present)
    if missing:
        raise MissingLocation(f"{what} has no frames for {', '.join(missing)}")


def transfer_matrix(location_sets: Sequence[Sequence[str]], train: SpecDataset,
                    val: SpecDataset, test: SpecDataset, cfg: TrainConfig,
                    eval_locations: Sequence[str] | None = None, workers: int = 1,
                    keep_models: bool = False) -> TransferReport:
    """Train one model per location set on ``train`` (validated on the same
    locations of ``val``) and score it on every evaluation location of ``test``.

    Rows run concurrently on up to ``workers`` threads; the report is
    assembled in row order, so the result does not depend on ``workers``.
    """
    row_sets = [tuple(rs) for rs in location_sets]
    if eval_locations is None:
        eval_locations = [loc for loc in BASE_LOCATIONS if loc in set(test.locations.tolist())]
    columns = list(eval_locations)
    wanted = sorted({loc for rs in row_sets for loc in rs})
    _check_locations(train, wanted, "training split")
    _check_locations(val, wanted, "validation split")
    _check_locations(test, columns, "test split")
    by_loc = {col: test.where(locations=[col]) for col in columns}

    def job(rs):
        log.info("training on %s", set_name(rs))
        model = train_motion_model(train.where(locations=rs), val.where(locations=rs), cfg)
        cells = {col: evaluate(model, by_loc[col], cfg.macro_classes) for col in columns}
        return model, cells

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, row_sets))
    else:
        results = [job(rs) for rs in row_sets]

    f1 = np.zeros((len(row_sets), len(columns)))
    confusion = {}
    for r, (_, cells) in enumerate(results):
        for c, col in enumerate(columns):
            f1[r, c], confusion[(r, col)] = cells[col]
    models = [m for m, _ in results] if keep_models else []
    return TransferReport(row_sets, columns, f1, confusion, models, cfg.macro_classes)


@dataclass
class EigenRanking:
    k: int
    combos: list[tuple[str, ...]]
    scores: list[float]  # average F1 over every evaluation location
    report: TransferReport | None = None

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"eigenlocations_k{self.k}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "locations", "average_f1"])
            for i, (combo, score) in enumerate(zip(self.combos, self.scores), 1):
                w.writerow([i, set_name(combo), f"{score:.2f}"])
        return path


def eigenlocations(k: int, train: SpecDataset, val: SpecDataset, test: SpecDataset,
                   cfg: TrainConfig, locations: Sequence[str] = BASE_LOCATIONS,
                   workers: int = 1) -> EigenRanking:
    """Exhaustively train every k-subset of ``locations`` and rank the subsets
    by their average F1 over all evaluation locations (best first; ties keep
    enumeration order)."""
    if k not in (1, 2, 3):
        raise ValueError(f"k must be 1, 2 or 3, got {k}")
    combos = list(itertools.combinations(locations, k))
    report = transfer_matrix(combos, train, val, test, cfg, list(locations), workers)
    avg = report.row_average
    order = sorted(range(len(combos)), key=lambda i: -avg[i])
    return EigenRanking(k, [combos[i] for i in order], [float(avg[i]) for i in order], report)


@dataclass(frozen=True)
class ParityResult:
    native_f1: float  # model on data resampled to its own rate
    transformed_f1: float  # model on higher-rate spectrograms via spectransform
    agreement: float  # fraction of frames where both inputs get the same label

    @property
    def gap(self) -> float:
        return abs(self.native_f1 - self.transformed_f1)


def spectransform_parity(model: MotionModel, native: SpecDataset, high: SpecDataset,
                         classes=(0, 1, 2)) -> ParityResult:
    """Score a low-rate model on natively resampled data and on high-rate data
    covering the same frames.

    ``high`` is either already conditioned for the model's rate (from
    ``SessionStore.featurize(..., transform_to=model.rate_hz)``) or holds
    finished high-rate images, which are then spectransformed here.
    """
    transformed = high if high.rate_hz == model.rate_hz else high.spectransformed(model.rate_hz)
    f_native, _ = evaluate(model, native, classes)
    f_trans, _ = evaluate(model, transformed, classes)
    if len(native) == len(transformed):
        agree = float(np.mean(predict(model, native.images) == predict(model, transformed.images)))
    else:
        agree = float("nan")
    return ParityResult(f_native, f_trans, agree)


def per_location_f1(model: MotionModel, data: SpecDataset, classes=(0, 1, 2)) -> dict[str, float]:
    preds = predict(model, data.images)
    out = {}
    for loc in [l for l in BASE_LOCATIONS if l in set(data.locations.tolist())] + sorted(
            set(data.locations.tolist()) - set(BASE_LOCATIONS)):
        mask = data.locations == loc
        cm = confusion_matrix(data.labels[mask], preds[mask], model.net.n_classes)
        out[loc] = 100.0 * macro_f1(cm, classes)
    return out
