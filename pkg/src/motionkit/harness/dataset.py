"""In-memory spectrogram datasets and featurisation of on-disk sessions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import BadDirection, EmptyDataset, MixedRates
from ..features import (
    frame_count,
    magnitude,
    normalize_channels,
    percentile_normalize,
    rate_config,
    spectransform,
    stft_spectrogram,
)
from ..ingest import (
    CLASS_NAMES,
    Activity,
    LabelSegment,
    Recording,
    SessionManifest,
    align_labels,
    load_session,
    read_tensor,
    resample_recording,
    write_tensor,
)

INDEX_HEADER = ["tensor_path", "frame_idx", "user_id", "location", "activity", "rate_hz",
                "frame_start_unix_s"]


@dataclass
class SpecDataset:
    images: np.ndarray  # (N, T, F) float32
    labels: np.ndarray  # (N,) int64
    users: np.ndarray  # (N,) str
    locations: np.ndarray  # (N,) str
    frame_start: np.ndarray  # (N,) float64, unix seconds
    segments: np.ndarray  # (N,) int64; frames of one labeled run share an id
    rate_hz: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:])

    def select(self, mask) -> "SpecDataset":
        mask = np.asarray(mask)
        return SpecDataset(self.images[mask], self.labels[mask], self.users[mask],
                           self.locations[mask], self.frame_start[mask], self.segments[mask],
                           self.rate_hz)

    def where(self, users: Iterable[str] | None = None,
              locations: Iterable[str] | None = None) -> "SpecDataset":
        mask = np.ones(len(self), dtype=bool)
        if users is not None:
            mask &= np.isin(self.users, list(users))
        if locations is not None:
            mask &= np.isin(self.locations, list(locations))
        return self.select(mask)

    def with_images(self, images: np.ndarray, rate_hz: int | None = None) -> "SpecDataset":
        return SpecDataset(np.asarray(images, dtype=np.float32), self.labels, self.users,
                           self.locations, self.frame_start, self.segments,
                           self.rate_hz if rate_hz is None else rate_hz)

    def spectransformed(self, to_hz: int) -> "SpecDataset":
        return self.with_images(spectransform(self.images, self.rate_hz, to_hz), to_hz)

    @staticmethod
    def concat(parts: Sequence["SpecDataset"]) -> "SpecDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise EmptyDataset("nothing to concatenate")
        rates = {p.rate_hz for p in parts}
        if len(rates) != 1:
            raise MixedRates(f"datasets at different rates {sorted(rates)}")
        return SpecDataset(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.users for p in parts]),
            np.concatenate([p.locations for p in parts]),
            np.concatenate([p.frame_start for p in parts]),
            np.concatenate([p.segments for p in parts]),
            parts[0].rate_hz,
        )

    # -- persistence: one tensor file plus the CSV index -------------------

    def save(self, tensor_path) -> Path:
        tensor_path = Path(tensor_path)
        tensor_path.parent.mkdir(parents=True, exist_ok=True)
        write_tensor(self.images, self.images.shape, tensor_path)
        index = tensor_path.with_suffix(".csv")
        with open(index, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(INDEX_HEADER + ["segment"])
            for i in range(len(self)):
                w.writerow([tensor_path.name, i, self.users[i], self.locations[i],
                            CLASS_NAMES[self.labels[i]] if self.labels[i] < len(CLASS_NAMES)
                            else int(self.labels[i]),
                            self.rate_hz, f"{self.frame_start[i]:.3f}", int(self.segments[i])])
        return index

    @classmethod
    def load(cls, tensor_path) -> "SpecDataset":
        tensor_path = Path(tensor_path)
        images = read_tensor(tensor_path).values
        rows = []
        with open(tensor_path.with_suffix(".csv"), newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[: len(INDEX_HEADER)] != INDEX_HEADER:
                raise ValueError(f"{tensor_path}: bad index header")
            rows = list(reader)
        if len(rows) != images.shape[0]:
            raise ValueError(f"{tensor_path}: index has {len(rows)} rows for {images.shape[0]} images")

        def label(s):
            return int(Activity.parse(s)) if not s.isdigit() else int(s)

        rates = {float(r[5]) for r in rows}
        if len(rates) > 1:
            raise MixedRates(f"{tensor_path}: several rates in one dataset")
        return cls(
            images=images,
            labels=np.array([label(r[4]) for r in rows], dtype=np.int64),
            users=np.array([r[2] for r in rows]),
            locations=np.array([r[3] for r in rows]),
            frame_start=np.array([float(r[6]) for r in rows]),
            segments=np.array([int(r[7]) if len(r) > 7 else 0 for r in rows], dtype=np.int64),
            rate_hz=int(rates.pop()) if rates else 100,
        )


def empty_dataset(rate_hz: int) -> SpecDataset:
    shape = rate_config(rate_hz).out_shape
    return SpecDataset(np.zeros((0,) + shape, np.float32), np.zeros(0, np.int64),
                       np.zeros(0, dtype="<U1"), np.zeros(0, dtype="<U1"), np.zeros(0),
                       np.zeros(0, np.int64), rate_hz)


class SessionStore:
    """Loads each session's recordings once and featurises on demand."""

    def __init__(self, sessions: Sequence[SessionManifest]):
        self.sessions = list(sessions)
        self._cache: dict[str, tuple[list[Recording], list[LabelSegment]]] = {}

    @property
    def users(self) -> list[str]:
        return sorted({s.user_id for s in self.sessions})

    @property
    def locations(self) -> list[str]:
        seen = []
        for s in self.sessions:
            for loc in s.locations:
                if loc not in seen:
                    seen.append(loc)
        return seen

    def load(self, session: SessionManifest):
        if session.session_id not in self._cache:
            self._cache[session.session_id] = load_session(session)
        return self._cache[session.session_id]

    def featurize(self, rate_hz: int, users: Iterable[str] | None = None,
                  locations: Iterable[str] | None = None, frame_stride: int = 1,
                  transform_to: int | None = None) -> SpecDataset:
        """Spectrogram images for every labeled frame of the selected
        users/locations, recordings resampled to ``rate_hz`` first.

        With ``transform_to`` the ``rate_hz`` spectra are spectransformed to
        that lower rate before percentile scaling (see ``spectransform``).
        """
        users = None if users is None else set(users)
        parts = []
        for s_idx, session in enumerate(self.sessions):
            if users is not None and session.user_id not in users:
                continue
            recs, segments = self.load(session)
            parts.append(featurize_session(recs, segments, rate_hz, locations, frame_stride, s_idx,
                                            transform_to))
        parts = [p for p in parts if len(p)]
        out_rate = rate_config(transform_to or rate_hz).rate_hz
        return SpecDataset.concat(parts) if parts else empty_dataset(out_rate)


def featurize_session(recs: Sequence[Recording], segments, rate_hz: int,
                      locations: Iterable[str] | None = None, frame_stride: int = 1,
                      session_idx: int = 0, transform_to: int | None = None) -> SpecDataset:
    """Featurise one session's recordings. ``segments`` need ``activity``,
    ``start_unix_s`` and ``stop_unix_s``; activities must be integer-like."""
    cfg = rate_config(rate_hz)
    out_rate = cfg.rate_hz
    if transform_to is not None:
        out_rate = rate_config(transform_to).rate_hz
        if not out_rate < cfg.rate_hz:
            raise BadDirection(f"spectransform only lowers the rate ({cfg.rate_hz} -> {out_rate})")
    locations = None if locations is None else set(locations)
    images, labels, us, locs, starts, segs = [], [], [], [], [], []
    for r_idx, rec in enumerate(recs):
        if locations is not None and rec.location not in locations:
            continue
        rec = resample_recording(rec, cfg.rate_hz)
        mag = magnitude(normalize_channels(rec))
        for k_idx, (lo, hi, activity) in enumerate(align_labels(rec, segments)):
            # stable across calls so ids never collide between subsets
            seg_id = (session_idx * 64 + r_idx) * 4096 + k_idx
            n = frame_count(hi - lo, cfg)
            if n == 0:
                continue
            starts_idx = lo + np.arange(0, n, frame_stride) * cfg.frame_hop
            frames = mag[starts_idx[:, None] + np.arange(cfg.frame_len)[None, :]]
            spec = stft_spectrogram(frames, cfg)
            if transform_to is None:
                images.append(percentile_normalize(spec).astype(np.float32))
            else:
                images.append(spectransform(spec, cfg.rate_hz, out_rate, normalized=False))
            k = len(starts_idx)
            labels.append(np.full(k, int(activity), np.int64))
            us.append(np.full(k, rec.user_id))
            locs.append(np.full(k, rec.location))
            starts.append(rec.t0_unix_s + starts_idx / cfg.rate_hz)
            segs.append(np.full(k, seg_id, np.int64))
    if not images:
        return empty_dataset(out_rate)
    return SpecDataset(np.concatenate(images), np.concatenate(labels), np.concatenate(us),
                       np.concatenate(locs), np.concatenate(starts), np.concatenate(segs),
                       out_rate)
