"""Recording ingestion: manifests, label/recording CSVs, label alignment,
band-limited resampling and the ``MPTN`` tensor file format."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DuplicateLocation,
    EmptySignal,
    MalformedLabels,
    MalformedManifest,
    ShapeMismatch,
    TruncatedPayload,
)


class Activity(enum.IntEnum):
    WALKING = 0
    RUNNING = 1
    CYCLING = 2
    OTHER = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "Activity":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise MalformedLabels(f"unknown activity {name!r}") from None


CLASS_NAMES = tuple(a.label for a in Activity)

# The six locations of the main study, in report order.
BASE_LOCATIONS = ("Wrist", "Ankle", "Thigh", "Head", "Chest", "Shoulder")
# Locations used only for evaluation on unseen placements.
EXTRA_LOCATIONS = ("Hat", "Belt", "Shoe")
_KNOWN = {name.lower(): name for name in BASE_LOCATIONS + EXTRA_LOCATIONS}


def canonical_location(name: str) -> str:
    """Map a location name to its canonical spelling.

    Unknown names are kept verbatim (they are "other" placements such as a
    custom sensor board) but must be non-empty.
    """
    name = name.strip()
    if not name:
        raise ValueError("empty location name")
    return _KNOWN.get(name.lower(), name)


@dataclass(frozen=True)
class Recording:
    user_id: str
    location: str
    device: str
    rate_hz: float
    t0_unix_s: float
    samples: np.ndarray  # (n, 3), in g
    zero_variance_axes: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise ShapeMismatch(f"samples must be (n, 3), got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("non-finite sample values")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0_unix_s + np.arange(len(self)) / self.rate_hz

    def with_samples(self, samples: np.ndarray, **changes) -> "Recording":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class LabelSegment:
    activity: Activity
    start_unix_s: float
    stop_unix_s: float

    def __post_init__(self):
        if not self.stop_unix_s > self.start_unix_s:
            raise MalformedLabels(
                f"segment stop {self.stop_unix_s} not after start {self.start_unix_s}"
            )


@dataclass(frozen=True)
class RecordingEntry:
    path: Path
    location: str
    rate_hz: float


@dataclass
class SessionManifest:
    session_id: str
    user_id: str
    recording_files: list[RecordingEntry]
    label_file: Path
    root: Path = field(default=Path("."), repr=False)

    @property
    def locations(self) -> list[str]:
        return [r.location for r in self.recording_files]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def _session_from_json(obj, root: Path, lineno: int) -> SessionManifest:
    def need(mapping, key):
        if not isinstance(mapping, dict) or key not in mapping:
            raise MalformedManifest(f"line {lineno}: missing field {key!r}")
        return mapping[key]

    recordings = need(obj, "recordings")
    if not isinstance(recordings, list):
        raise MalformedManifest(f"line {lineno}: 'recordings' must be a list")
    entries = []
    seen = set()
    for rec in recordings:
        loc = canonical_location(str(need(rec, "location")))
        if loc in seen:
            raise DuplicateLocation(f"line {lineno}: location {loc} listed twice")
        seen.add(loc)
        try:
            rate = float(need(rec, "rate_hz"))
        except (TypeError, ValueError):
            raise MalformedManifest(f"line {lineno}: bad rate_hz") from None
        if not rate > 0:
            raise MalformedManifest(f"line {lineno}: rate_hz must be positive")
        entries.append(RecordingEntry(root / str(need(rec, "path")), loc, rate))
    session = SessionManifest(
        session_id=str(need(obj, "session_id")),
        user_id=str(need(obj, "user_id")),
        recording_files=entries,
        label_file=root / str(need(obj, "labels")),
        root=root,
    )
    for p in [session.label_file] + [e.path for e in entries]:
        if not p.exists():
            raise MalformedManifest(f"line {lineno}: referenced file {p} does not exist")
    return session


def parse_manifest(path) -> list[SessionManifest]:
    """Parse a line-delimited JSON manifest, one session per line.

    Relative paths inside the manifest resolve against the manifest's
    directory.
    """
    path = Path(path)
    root = path.parent
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedManifest(f"line {lineno}: {exc}") from None
            sessions.append(_session_from_json(obj, root, lineno))
    if not sessions:
        raise MalformedManifest(f"{path}: no sessions")
    ids = [s.session_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise MalformedManifest(f"{path}: duplicate session_id")
    return sessions


def write_manifest(sessions: Iterable[SessionManifest], path) -> None:
    path = Path(path)
    root = path.parent
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            obj = {
                "session_id": s.session_id,
                "user_id": s.user_id,
                "labels": Path(s.label_file).relative_to(root).as_posix(),
                "recordings": [
                    {
                        "path": Path(r.path).relative_to(root).as_posix(),
                        "location": r.location,
                        "rate_hz": r.rate_hz,
                    }
                    for r in s.recording_files
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Label and recording CSVs
# ---------------------------------------------------------------------------

LABEL_HEADER = ["session_id", "activity", "start_unix_s", "stop_unix_s"]
RECORDING_HEADER = "t_unix_s,x_g,y_g,z_g"


def read_labels(path, session_id: str | None = None) -> list[LabelSegment]:
    segments = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise MalformedLabels(f"{path}: expected header {','.join(LABEL_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise MalformedLabels(f"{path}: bad row {row}")
            if session_id is not None and row[0] != session_id:
                continue
            try:
                start, stop = float(row[2]), float(row[3])
            except ValueError:
                raise MalformedLabels(f"{path}: bad timestamps in {row}") from None
            segments.append(LabelSegment(Activity.parse(row[1]), start, stop))
    segments.sort(key=lambda s: s.start_unix_s)
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_unix_s < prev.stop_unix_s:
            raise MalformedLabels(f"{path}: overlapping segments")
    return segments


def write_labels(path, session_id: str, segments: Sequence[LabelSegment]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for s in segments:
            writer.writerow(
                [session_id, s.activity.label, f"{s.start_unix_s:.3f}", f"{s.stop_unix_s:.3f}"]
            )


def read_recording(path, *, user_id: str, location: str, rate_hz: float,
                   device: str = "") -> Recording:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RECORDING_HEADER:
            raise MalformedManifest(f"{path}: expected header {RECORDING_HEADER}")
        body = fh.read()
    if not body.strip():
        raise EmptySignal(f"{path}: no samples")
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if data.size == 0:
        raise EmptySignal(f"{path}: no samples")
    if data.shape[1] != 4:
        raise MalformedManifest(f"{path}: expected 4 columns")
    return Recording(
        user_id=user_id,
        location=canonical_location(location),
        device=device or Path(path).stem,
        rate_hz=float(rate_hz),
        t0_unix_s=float(data[0, 0]),
        samples=data[:, 1:],
    )


def write_recording(path, rec: Recording) -> None:
    t = rec.timestamps
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RECORDING_HEADER + "\n")
        np.savetxt(fh, np.column_stack([t, rec.samples]),
                   fmt=["%.3f", "%.6f", "%.6f", "%.6f"], delimiter=",")


def load_session(session: SessionManifest) -> tuple[list[Recording], list[LabelSegment]]:
    """Read every recording of a session plus its labels.

    Locations absent from the manifest are simply absent here; nothing is
    imputed.
    """
    labels = read_labels(session.label_file, session.session_id)
    recs = [
        read_recording(e.path, user_id=session.user_id, location=e.location,
                       rate_hz=e.rate_hz)
        for e in session.recording_files
    ]
    return recs, labels


# ---------------------------------------------------------------------------
# Label alignment
# ---------------------------------------------------------------------------


def align_labels(recording: Recording,
                 labels: Sequence[LabelSegment]) -> list[tuple[int, int, Activity]]:
    """Map label segments to half-open sample index ranges ``[start, stop)``.

    A sample at time ``t`` belongs to a segment when ``start <= t < stop``.
    Samples outside every segment are dropped.
    """
    n = len(recording)
    rate = recording.rate_hz
    out = []
    for seg in sorted(labels, key=lambda s: s.start_unix_s):
        # 1e-9 guards against float noise when a boundary sits exactly on a sample
        lo = math.ceil((seg.start_unix_s - recording.t0_unix_s) * rate - 1e-9)
        hi = math.ceil((seg.stop_unix_s - recording.t0_unix_s) * rate - 1e-9)
        lo, hi = max(lo, 0), min(hi, n)
        if hi > lo:
            out.append((lo, hi, seg.activity))
    return out


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

SINC_HALF_WIDTH = 64
CUTOFF_FRACTION = 0.45


def resample(signal, from_hz: float, to_hz: float) -> np.ndarray:
    """Band-limited resampling of a 1-D series.

    A Hann-windowed sinc low-pass (cutoff ``0.45 * min(from_hz, to_hz)``,
    64 input samples either side) is evaluated directly at every output
    instant, so filtering and interpolation happen in one pass. Weights are
    renormalised per output sample so DC passes exactly, including at the
    edges.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("resample expects a 1-D series")
    if x.size == 0:
        raise EmptySignal("cannot resample an empty signal")
    if not (from_hz > 0 and to_hz > 0):
        raise ValueError("rates must be positive")
    if from_hz == to_hz:
        return x.copy()

    n_out = int(math.floor(x.size * to_hz / from_hz + 1e-9))
    if n_out == 0:
        return np.zeros(0)
    cutoff = CUTOFF_FRACTION * min(from_hz, to_hz)
    # output instants expressed in input-sample units
    pos = np.arange(n_out) * (from_hz / to_hz)
    base = np.floor(pos).astype(np.int64)
    taps = np.arange(-SINC_HALF_WIDTH + 1, SINC_HALF_WIDTH + 1)
    idx = base[:, None] + taps[None, :]
    offset = pos[:, None] - idx  # in input samples
    w = np.sinc(2.0 * cutoff / from_hz * offset)
    w *= 0.5 * (1.0 + np.cos(np.pi * offset / SINC_HALF_WIDTH))
    w[np.abs(offset) >= SINC_HALF_WIDTH] = 0.0
    valid = (idx >= 0) & (idx < x.size)
    w = np.where(valid, w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("ij,ij->i", w, x[np.clip(idx, 0, x.size - 1)])


def resample_recording(rec: Recording, to_hz: float) -> Recording:
    if rec.rate_hz == to_hz:
        return rec
    cols = [resample(rec.samples[:, k], rec.rate_hz, to_hz) for k in range(3)]
    return replace(rec, rate_hz=float(to_hz), samples=np.column_stack(cols))


# ---------------------------------------------------------------------------
# Tensor files
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"MPTN"
TENSOR_VERSION = 1
DTYPE_F32LE = 1


@dataclass
class TensorFile:
    shape: tuple[int, ...]
    values: np.ndarray  # float32, already reshaped
    dtype: str = "f32le"


def encode_tensor(values, shape=None) -> bytes:
    arr = np.asarray(values, dtype="<f4")
    if shape is None:
        shape = arr.shape
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != arr.size:
        raise ShapeMismatch(f"shape {shape} does not match {arr.size} values")
    if len(shape) > 255:
        raise ShapeMismatch("too many dimensions")
    header = TENSOR_MAGIC + struct.pack("<BBB", TENSOR_VERSION, DTYPE_F32LE, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(arr).reshape(-1).tobytes()


def decode_tensor(buf: bytes) -> TensorFile:
    if len(buf) < 7 or buf[:4] != TENSOR_MAGIC:
        raise BadMagic("not an MPTN tensor file")
    version, dtype, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != TENSOR_VERSION or dtype != DTYPE_F32LE:
        raise BadMagic(f"unsupported version/dtype {version}/{dtype}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise TruncatedPayload("header truncated")
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    count = math.prod(shape)
    if len(buf) - off < 4 * count:
        raise TruncatedPayload(f"expected {4 * count} payload bytes, got {len(buf) - off}")
    if len(buf) - off > 4 * count:
        raise ShapeMismatch("payload longer than shape implies")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape)
    return TensorFile(shape=tuple(shape), values=values.astype(np.float32))


def write_tensor(values, shape, path) -> None:
    Path(path).write_bytes(encode_tensor(values, shape))


def read_tensor(path) -> TensorFile:
    return decode_tensor(Path(path).read_bytes())
