from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from motionkit.errors import (
    BadMagic,
    DuplicateLocation,
    EmptySignal,
    MalformedLabels,
    MalformedManifest,
    ShapeMismatch,
    TruncatedPayload,
)
from motionkit.ingest import (
    Activity,
    LabelSegment,
    Recording,
    align_labels,
    decode_tensor,
    encode_tensor,
    load_session,
    parse_manifest,
    read_labels,
    read_recording,
    read_tensor,
    resample,
    write_labels,
    write_recording,
    write_tensor,
)

LOCS = ["Wrist", "Ankle", "Thigh", "Head", "Chest", "Shoulder"]


def _rec(n=1000, rate=100.0, t0=0.0, loc="Wrist", seed=0):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    return Recording("u00", loc, "dev", rate, t0, x)


def _write_session(tmp_path, locs=LOCS, n=500):
    udir = tmp_path / "u00"
    udir.mkdir()
    recs = []
    for i, loc in enumerate(locs):
        rec = _rec(n, loc=loc, t0=1000.0, seed=i)
        write_recording(udir / f"{loc}_{i}.csv", rec)
        recs.append({"path": f"u00/{loc}_{i}.csv", "location": loc, "rate_hz": 100})
    write_labels(udir / "labels.csv", "s0", [LabelSegment(Activity.WALKING, 1001.0, 1003.0)])
    line = {"session_id": "s0", "user_id": "u00", "recordings": recs,
            "labels": "u00/labels.csv"}
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps(line) + "\n")
    return path


def test_manifest_six_recordings(tmp_path):
    sessions = parse_manifest(_write_session(tmp_path))
    assert len(sessions) == 1
    assert len(sessions[0].recording_files) == 6
    recs, labels = load_session(sessions[0])
    assert [r.location for r in recs] == LOCS
    assert labels[0].activity == Activity.WALKING


def test_manifest_empty_file(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    with pytest.raises(MalformedManifest):
        parse_manifest(p)


def test_manifest_duplicate_location(tmp_path):
    with pytest.raises(DuplicateLocation):
        parse_manifest(_write_session(tmp_path, locs=["Wrist", "Wrist"]))


def test_manifest_bad_json(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(MalformedManifest):
        parse_manifest(p)


def test_labels_roundtrip_and_overlap(tmp_path):
    segs = [LabelSegment(Activity.RUNNING, 0.0, 5.0), LabelSegment(Activity.OTHER, 5.0, 9.5)]
    write_labels(tmp_path / "l.csv", "s", segs)
    assert read_labels(tmp_path / "l.csv") == segs
    (tmp_path / "bad.csv").write_text(
        "session_id,activity,start_unix_s,stop_unix_s\ns,walking,0,5\ns,running,4,6\n")
    with pytest.raises(MalformedLabels):
        read_labels(tmp_path / "bad.csv")
    with pytest.raises(MalformedLabels):
        LabelSegment(Activity.WALKING, 3.0, 3.0)


def test_recording_roundtrip(tmp_path):
    rec = _rec(200, t0=1.7e9)
    write_recording(tmp_path / "r.csv", rec)
    back = read_recording(tmp_path / "r.csv", user_id="u00", location="Wrist", rate_hz=100.0)
    assert back.t0_unix_s == pytest.approx(rec.t0_unix_s, abs=1e-3)
    np.testing.assert_allclose(back.samples, rec.samples, atol=1e-6)


def test_empty_signal(tmp_path):
    (tmp_path / "r.csv").write_text("t_unix_s,x_g,y_g,z_g\n")
    with pytest.raises(EmptySignal):
        read_recording(tmp_path / "r.csv", user_id="u", location="Wrist", rate_hz=100.0)
    with pytest.raises(EmptySignal):
        resample(np.zeros(0), 100, 25)


def test_align_labels_arithmetic():
    rec = _rec(3000)
    assert align_labels(rec, [LabelSegment(Activity.WALKING, 10.0, 20.0)]) == [
        (1000, 2000, Activity.WALKING)]


def test_align_labels_before_t0():
    rec = _rec(3000, t0=100.0)
    assert align_labels(rec, [LabelSegment(Activity.WALKING, 10.0, 20.0)]) == []


def test_align_labels_adjacent_matches_per_sample_oracle():
    rec = _rec(2000, rate=50.0, t0=3.3)
    segs = [LabelSegment(Activity.WALKING, 5.01, 12.37), LabelSegment(Activity.CYCLING, 12.37, 30.0)]
    out = align_labels(rec, segs)
    assert out[0][1] == out[1][0]
    t = rec.timestamps
    for (lo, hi, act), seg in zip(out, segs):
        inside = np.flatnonzero((t >= seg.start_unix_s) & (t < seg.stop_unix_s))
        assert (lo, hi) == (inside[0], inside[-1] + 1)
        assert act == seg.activity


def test_resample_constant():
    out = resample(np.ones(400), 100, 25)
    assert len(out) == 100
    np.testing.assert_allclose(out[10:-10], 1.0, atol=1e-3)


def test_resample_sine_amplitude():
    t = np.arange(2000) / 100
    out = resample(np.sin(2 * np.pi * 5 * t), 100, 25)
    t2 = np.arange(len(out)) / 25
    ref = np.sin(2 * np.pi * 5 * t2)
    inner = slice(40, -40)
    assert np.max(np.abs(out[inner] - ref[inner])) < 0.01


def test_resample_identity():
    x = np.random.default_rng(1).normal(size=500)
    np.testing.assert_allclose(resample(x, 100, 100), x, atol=1e-6)


def test_resample_upsample_length():
    assert len(resample(np.zeros(100), 25, 100)) == 400


def test_tensor_header_bytes():
    buf = encode_tensor(np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert buf[:7] == bytes([0x4D, 0x50, 0x54, 0x4E, 0x01, 0x01, 0x02])
    assert buf[7:15] == bytes([2, 0, 0, 0, 2, 0, 0, 0])
    assert buf[15:] == struct.pack("<4f", 1, 2, 3, 4)


def test_tensor_roundtrip(tmp_path):
    x = np.random.default_rng(0).random((128, 128)).astype(np.float32)
    write_tensor(x, x.shape, tmp_path / "a.mptn")
    t = read_tensor(tmp_path / "a.mptn")
    assert t.values.tobytes() == x.tobytes()
    assert tuple(t.values.shape) == (128, 128)
    write_tensor(t.values, t.values.shape, tmp_path / "b.mptn")
    assert (tmp_path / "a.mptn").read_bytes() == (tmp_path / "b.mptn").read_bytes()


def test_tensor_errors():
    buf = encode_tensor(np.ones((2, 3), np.float32))
    with pytest.raises(BadMagic):
        decode_tensor(b"XXXX" + buf[4:])
    with pytest.raises(TruncatedPayload):
        decode_tensor(buf[:-2])
    with pytest.raises(ShapeMismatch):
        encode_tensor(np.ones(6, np.float32), (4, 2))
