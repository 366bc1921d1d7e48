"""Seeded synthetic multi-location accelerometer benchmark.

Stands in for a real multi-device study at desk scale. Every user performs
walking, running and cycling plus a block of "other" motion while six
devices record simultaneously. Periodic activities are rendered as harmonic
mixtures of the user's cadence whose weights depend on body location; the
"other" class is band-limited noise bursts. Each activity holds the device
in its own posture, so gravity shows up as a per-segment offset that slowly
drifts. All parameters here are plausible defaults, not measured values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from ..ingest import (
    BASE_LOCATIONS,
    CLASS_NAMES,
    Activity,
    LabelSegment,
    Recording,
    RecordingEntry,
    SessionManifest,
    write_labels,
    write_manifest,
    write_recording,
)

T0_BASE = 1_700_000_000

# harmonic multiples of the cadence
MULTIPLES = (0.5, 1.0, 2.0, 3.0)

# (gain in g, weights over MULTIPLES) per location and activity
PROFILES: dict[str, dict[str, tuple[float, tuple[float, ...]]]] = {
    "Wrist": {
        "walking": (0.45, (0.45, 1.0, 0.25, 0.05)),
        "running": (0.9, (0.5, 1.0, 0.35, 0.1)),
        "cycling": (0.12, (0.0, 1.0, 0.6, 0.4)),
    },
    "Ankle": {
        "walking": (1.1, (0.5, 1.0, 0.4, 0.2)),
        "running": (2.0, (0.5, 1.0, 0.5, 0.3)),
        "cycling": (0.8, (0.0, 1.0, 0.15, 0.05)),
    },
    "Thigh": {
        "walking": (0.7, (0.5, 1.0, 0.45, 0.2)),
        "running": (1.4, (0.8, 1.0, 0.6, 0.3)),
        "cycling": (0.6, (0.0, 1.0, 0.25, 0.05)),
    },
    "Head": {
        "walking": (0.25, (0.05, 1.0, 0.3, 0.05)),
        "running": (0.7, (0.05, 1.0, 0.5, 0.2)),
        "cycling": (0.1, (0.0, 1.0, 1.0, 0.3)),
    },
    "Chest": {
        "walking": (0.3, (0.1, 1.0, 0.35, 0.1)),
        "running": (0.8, (0.1, 1.0, 0.55, 0.25)),
        "cycling": (0.12, (0.0, 1.0, 0.8, 0.3)),
    },
    "Shoulder": {
        "walking": (0.35, (0.25, 1.0, 0.3, 0.1)),
        "running": (0.85, (0.3, 1.0, 0.5, 0.2)),
        "cycling": (0.12, (0.0, 1.0, 0.7, 0.3)),
    },
}
# default profile for any other placement
DEFAULT_PROFILE = PROFILES["Chest"]

# "other" sub-activities: (band in Hz, relative gain per location)
OTHER_KINDS = {
    "idle": ((0.2, 1.0), {}),
    "wrist": ((3.0, 8.0), {"Wrist": 1.0}),
    "upper": ((0.3, 1.2), {"Wrist": 1.0, "Shoulder": 0.8, "Chest": 0.6, "Head": 0.3}),
    "lower": ((0.4, 2.5), {"Ankle": 1.0, "Thigh": 0.9}),
    "full": ((0.5, 5.0), {loc: 0.8 for loc in BASE_LOCATIONS}),
}

# pseudo-activities held out for embedding fine-tuning (gain, weights, band)
EXTRA_ACTIVITIES = {
    "pushup": (0.5, (0.0, 1.0, 0.7, 0.2), (0.45, 0.75)),
    "weights": (0.6, (0.0, 1.0, 0.2, 0.5), (0.25, 0.45)),
}


@dataclass
class BenchSpec:
    seed: int = 7
    n_users: int = 12
    locations: tuple[str, ...] = BASE_LOCATIONS
    rate_hz: float = 100.0
    activity_s: float = 60.0
    other_s: float = 60.0
    gap_s: float = 4.0
    bands: dict = field(default_factory=lambda: {
        "walking": (1.4, 2.2),
        "running": (2.4, 3.2),
        "cycling": (0.8, 1.4),
    })
    noise_g: float = 0.04
    gravity_g: float = 1.0
    posture_spread_deg: float = 35.0
    drift_deg: float = 8.0

    def to_json(self) -> str:
        d = asdict(self)
        d["locations"] = list(self.locations)
        d["bands"] = {k: list(v) for k, v in self.bands.items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of a fixed vector ``v`` by per-sample ``angle``."""
    axis = _unit(axis)
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1 - c)


def _perturb(direction: np.ndarray, spread_deg: float, rng) -> np.ndarray:
    axis = _unit(np.cross(direction, rng.normal(size=3)))
    ang = np.deg2rad(spread_deg) * rng.uniform(0.3, 1.0)
    return _rotate(direction, axis, np.array([ang]))[0]


def _gravity(n: int, rate: float, base: np.ndarray, spec: BenchSpec, rng) -> np.ndarray:
    """Gravity in device coordinates for one segment: a posture offset that
    wobbles slowly by up to ``drift_deg``."""
    posture = _perturb(base, spec.posture_spread_deg, rng)
    t = np.arange(n) / rate
    period = rng.uniform(20.0, 60.0)
    angle = np.deg2rad(spec.drift_deg) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    axis = rng.normal(size=3)
    return spec.gravity_g * _rotate(posture, axis, angle)


def _harmonic_motion(n: int, rate: float, f0: float, gain: float, weights, rng,
                     up: np.ndarray | None = None) -> np.ndarray:
    """Sum of cadence harmonics; the fundamental leans toward ``up`` (the
    bounce of each step is mostly along gravity)."""
    t = np.arange(n) / rate
    # cadence wobbles by a few percent
    fm = rng.uniform(0.02, 0.08)
    depth = rng.uniform(0.01, 0.03)
    phase = 2 * np.pi * f0 * t - depth * f0 / fm * np.cos(2 * np.pi * fm * t)
    out = np.zeros((n, 3))
    for mult, w in zip(MULTIPLES, weights):
        if w <= 0:
            continue
        w = w * rng.uniform(0.8, 1.25)
        direction = _unit(rng.normal(size=3))
        if up is not None and mult == 1:
            direction = _unit(up + 0.4 * direction)
        out += (w * np.sin(mult * phase + rng.uniform(0, 2 * np.pi)))[:, None] * direction
    return gain * rng.uniform(0.8, 1.2) * out


def _band_noise(n: int, rate: float, band: tuple[float, float], rng) -> np.ndarray:
    lo, hi = band
    hi = min(hi, 0.45 * rate)
    sos = butter(4, [lo, hi], btype="band", fs=rate, output="sos")
    x = sosfilt(sos, rng.normal(size=(n + int(5 * rate), 3)), axis=0)[int(5 * rate):]
    return x / (x.std() + 1e-12)


def _other_motion(n: int, rate: float, location: str, rng) -> np.ndarray:
    """Five sub-activities in sequence, each a train of filtered noise bursts."""
    out = np.zeros((n, 3))
    edges = np.linspace(0, n, len(OTHER_KINDS) + 1).astype(int)
    for (kind, (band, gains)), a, b in zip(OTHER_KINDS.items(), edges, edges[1:]):
        m = b - a
        amp = 0.6 * gains.get(location, 0.1)
        if kind == "idle":
            amp = 0.02
        env = np.zeros(m)
        pos = 0
        while pos < m:
            on = int(rng.uniform(1.0, 4.0) * rate)
            off = int(rng.uniform(0.5, 2.5) * rate)
            env[pos:pos + on] = rng.uniform(0.5, 1.0)
            pos += on + off
        # soften the burst edges
        k = int(0.2 * rate)
        env = np.convolve(env, np.ones(k) / k, mode="same")
        out[a:b] = amp * env[:, None] * _band_noise(m, rate, band, rng)
    return out


def _profile(location: str) -> dict:
    return PROFILES.get(location, DEFAULT_PROFILE)


def render_segment(activity: str, location: str, n: int, rate: float, f0: float,
                   base_gravity: np.ndarray, spec: BenchSpec, rng) -> np.ndarray:
    """Raw 3-axis acceleration (g) for one location during one activity."""
    gravity = _gravity(n, rate, base_gravity, spec, rng)
    up = _unit(gravity.mean(axis=0))
    if activity == "other":
        motion = _other_motion(n, rate, location, rng)
    elif activity in EXTRA_ACTIVITIES:
        gain, weights, _ = EXTRA_ACTIVITIES[activity]
        scale = {"Wrist": 1.0, "Shoulder": 0.8, "Chest": 0.6}.get(location, 0.3)
        motion = _harmonic_motion(n, rate, f0, gain * scale, weights, rng, up)
    else:
        gain, weights = _profile(location)[activity]
        motion = _harmonic_motion(n, rate, f0, gain, weights, rng, up)
        if activity == "cycling":
            # handlebar / saddle vibration
            motion += 0.05 * _band_noise(n, rate, (8.0, 20.0), rng)
    noise = spec.noise_g * rng.normal(size=(n, 3))
    return gravity + motion + noise


def _activity_band(spec: BenchSpec, activity: str) -> tuple[float, float]:
    if activity in spec.bands:
        return tuple(spec.bands[activity])
    return EXTRA_ACTIVITIES[activity][2]


def render_user(spec: BenchSpec, user_idx: int, activities=None):
    """Recordings and labels of one user's session.

    Returns ``(recordings, segments)``; activities appear in a per-user
    shuffled order separated by unlabeled gaps.
    """
    rng = np.random.default_rng([spec.seed, user_idx])
    rate = spec.rate_hz
    if activities is None:
        activities = ["walking", "running", "cycling", "other"]
    order = [activities[i] for i in rng.permutation(len(activities))]
    cadence = {a: rng.uniform(*_activity_band(spec, a)) for a in activities if a != "other"}
    base_gravity = {loc: _unit(rng.normal(size=3)) for loc in spec.locations}
    t0 = float(T0_BASE + 100_000 * user_idx)

    gap = int(round(spec.gap_s * rate))
    chunks = {loc: [] for loc in spec.locations}
    segments = []
    cursor = 0
    for activity in order:
        dur = spec.other_s if activity == "other" else spec.activity_s
        n = int(round(dur * rate))
        for loc in spec.locations:
            quiet = _gravity(gap, rate, base_gravity[loc], spec, rng)
            chunks[loc].append(quiet + spec.noise_g * rng.normal(size=(gap, 3)))
        cursor += gap
        for loc in spec.locations:
            chunks[loc].append(render_segment(activity, loc, n, rate, cadence.get(activity, 1.0),
                                              base_gravity[loc], spec, rng))
        start = t0 + cursor / rate
        label = Activity.parse(activity) if activity in CLASS_NAMES else activity
        segments.append((label, start, start + n / rate))
        cursor += n
    for loc in spec.locations:
        chunks[loc].append(spec.noise_g * rng.normal(size=(gap, 3))
                           + _gravity(gap, rate, base_gravity[loc], spec, rng))
    user = f"u{user_idx:02d}"
    recs = [Recording(user_id=user, location=loc, device=f"{user}-{loc.lower()}", rate_hz=rate,
                      t0_unix_s=t0, samples=np.concatenate(chunks[loc]))
            for loc in spec.locations]
    return recs, segments


def gen_benchmark(spec: BenchSpec, out_dir) -> Path:
    """Write the benchmark in ingest formats and return the manifest path.

    Identical specs produce byte-identical trees.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sessions = []
    for u in range(spec.n_users):
        recs, segs = render_user(spec, u)
        user = recs[0].user_id
        udir = out / user
        udir.mkdir(exist_ok=True)
        session_id = f"s{u:02d}"
        labels = [LabelSegment(a, s, e) for a, s, e in segs]
        write_labels(udir / "labels.csv", session_id, labels)
        entries = []
        for rec in recs:
            path = udir / f"{rec.location}.csv"
            write_recording(path, rec)
            entries.append(RecordingEntry(path, rec.location, rec.rate_hz))
        sessions.append(SessionManifest(session_id, user, entries, udir / "labels.csv", out))
    manifest = out / "manifest.jsonl"
    write_manifest(sessions, manifest)
    (out / "bench_spec.json").write_text(spec.to_json())
    return manifest
