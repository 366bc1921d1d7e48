"""Spectrogram-image features.

Pipeline per recording: per-axis standardisation, orientation-free magnitude,
5.12 s frames on a 0.64 s hop, Hann-windowed STFT, per-image 99th percentile
scaling clipped to [0, 1]. Rates other than 100 Hz scale every length by
``rate / 100``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .errors import (
    BadDirection,
    BadFrameLength,
    ShapeMismatch,
    TooShort,
    UnsupportedRate,
)
from .ingest import Recording

FRAME_S = 5.12
HOP_S = 0.64
BASE_RATE = 100
BASE_WIN = 128
BASE_OVERLAP = 125

# rate -> (fft length, (time bins, freq bins))
RATE_TABLE: dict[int, tuple[int, tuple[int, int]]] = {
    10: (26, (38, 13)),
    25: (64, (96, 32)),
    50: (128, (96, 64)),
    75: (192, (96, 96)),
    100: (256, (128, 128)),
}
CANONICAL_RATES = tuple(sorted(RATE_TABLE))


@dataclass(frozen=True)
class SpectroConfig:
    rate_hz: int
    frame_s: float
    hop_s: float
    fft_len: int
    stft_win: int
    stft_overlap: int
    out_shape: tuple[int, int]
    detrend: bool = True

    @property
    def frame_len(self) -> int:
        return int(math.floor(self.frame_s * self.rate_hz + 1e-9))

    @property
    def frame_hop(self) -> int:
        return int(math.floor(self.hop_s * self.rate_hz + 1e-9))

    @property
    def stft_hop(self) -> int:
        return self.stft_win - self.stft_overlap


def rate_config(rate_hz) -> SpectroConfig:
    if rate_hz not in RATE_TABLE or int(rate_hz) != rate_hz:
        raise UnsupportedRate(
            f"{rate_hz} Hz is not one of {CANONICAL_RATES}; resample or spectransform first"
        )
    rate = int(rate_hz)
    r = rate / BASE_RATE
    fft_len, shape = RATE_TABLE[rate]
    # round() is half-to-even: 12.5 -> 12 keeps overlap < window at 10 Hz
    cfg = SpectroConfig(
        rate_hz=rate,
        frame_s=FRAME_S,
        hop_s=HOP_S,
        fft_len=fft_len,
        stft_win=round(BASE_WIN * r),
        stft_overlap=round(BASE_OVERLAP * r),
        out_shape=shape,
    )
    assert cfg.stft_overlap < cfg.stft_win <= cfg.fft_len
    return cfg


@dataclass
class SpectrogramImage:
    data: np.ndarray  # (time bins, freq bins) in [0, 1]
    location: str = ""
    user_id: str = ""
    activity: int = -1
    rate_hz: int = BASE_RATE
    frame_start_unix_s: float = float("nan")


def normalize_channels(recording: Recording) -> Recording:
    """Standardise each axis with the recording's own mean and population std.

    Constant axes become all-zero and are listed in ``zero_variance_axes``.
    """
    x = recording.samples
    if x.shape[0] < 2:
        raise TooShort("need at least two samples to normalise")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centred = x - mean
    flat = tuple(int(k) for k in np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean))))
    safe = std.copy()
    safe[list(flat)] = 1.0
    out = centred / safe
    out[:, list(flat)] = 0.0
    return recording.with_samples(out, zero_variance_axes=flat)


def magnitude(samples) -> np.ndarray:
    """Euclidean norm of each (x, y, z) sample. Accepts a Recording or an array."""
    if isinstance(samples, Recording):
        samples = samples.samples
    s = np.asarray(samples, dtype=np.float64)
    return np.sqrt(np.sum(s * s, axis=-1))


def frame_count(n: int, cfg: SpectroConfig) -> int:
    if n < cfg.frame_len:
        return 0
    return (n - cfg.frame_len) // cfg.frame_hop + 1


def frame_windows(series, cfg: SpectroConfig) -> np.ndarray:
    """Cut a series into ``(count, frame_len)`` frames; the tail is dropped."""
    x = np.asarray(series, dtype=np.float64)
    count = frame_count(x.size, cfg)
    if count == 0:
        raise TooShort(f"{x.size} samples < frame length {cfg.frame_len}")
    starts = np.arange(count) * cfg.frame_hop
    return x[starts[:, None] + np.arange(cfg.frame_len)[None, :]]


def _stft_window(cfg: SpectroConfig) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return get_window("hann", cfg.stft_win, fftbins=True)


def stft_spectrogram(frames, cfg: SpectroConfig) -> np.ndarray:
    """Magnitude STFT of one frame ``(frame_len,)`` or a batch ``(n, frame_len)``.

    Each slice has its mean removed (when ``cfg.detrend``) before the Hann
    window; otherwise the magnitude's constant offset leaks into every low
    bin. Returns ``(..., time_bins, freq_bins)`` trimmed to ``cfg.out_shape``:
    the Nyquist bin and any time slices past ``time_bins`` are dropped.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.shape[-1] != cfg.frame_len:
        raise BadFrameLength(f"frame length {x.shape[-1]} != {cfg.frame_len}")
    t_bins, f_bins = cfg.out_shape
    n_slices = (cfg.frame_len - cfg.stft_win) // cfg.stft_hop + 1
    if n_slices < t_bins:
        raise BadFrameLength("frame too short for the configured output shape")
    starts = np.arange(t_bins) * cfg.stft_hop
    idx = starts[:, None] + np.arange(cfg.stft_win)[None, :]
    segs = x[..., idx]
    if cfg.detrend:
        segs = segs - segs.mean(axis=-1, keepdims=True)
    segs = segs * _stft_window(cfg)
    spec = np.abs(np.fft.rfft(segs, n=cfg.fft_len, axis=-1))
    return spec[..., :f_bins]


def percentile_normalize(spec, q: float = 99.0) -> np.ndarray:
    """Divide each image by its own q-th percentile and clip to [0, 1].

    Works on a single image or a stack ``(n, H, W)``; images whose percentile
    is zero come out all-zero.
    """
    s = np.asarray(spec, dtype=np.float64)
    single = s.ndim == 2
    if single:
        s = s[None]
    p = np.percentile(s.reshape(s.shape[0], -1), q, axis=1)
    out = np.zeros_like(s)
    nz = p > 0
    out[nz] = s[nz] / p[nz, None, None]
    np.clip(out, 0.0, 1.0, out=out)
    return out[0] if single else out


def spectrogram_images(series, cfg: SpectroConfig, frame_stride: int = 1) -> np.ndarray:
    """Full path from a magnitude series to a stack of normalised images."""
    frames = frame_windows(series, cfg)[::frame_stride]
    return percentile_normalize(stft_spectrogram(frames, cfg)).astype(np.float32)


def recording_images(recording: Recording, cfg: SpectroConfig) -> np.ndarray:
    if recording.rate_hz != cfg.rate_hz:
        raise UnsupportedRate(f"recording at {recording.rate_hz} Hz, config at {cfg.rate_hz} Hz")
    return spectrogram_images(magnitude(normalize_channels(recording)), cfg)


# ---------------------------------------------------------------------------
# SpecTransform
# ---------------------------------------------------------------------------


def bilinear_resize(img, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres on the last two axes."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    oh, ow = out_shape

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, rf = axis_weights(h, oh)
    c0, c1, cf = axis_weights(w, ow)
    rows = img[..., r0, :] * (1 - rf)[:, None] + img[..., r1, :] * rf[:, None]
    return rows[..., c0] * (1 - cf) + rows[..., c1] * cf


def spectransform(spec, f_high: int, f_low: int, normalized: bool = True) -> np.ndarray:
    """Condition a spectrogram taken at ``f_high`` for a model trained at ``f_low``.

    Crops the frequency axis at ``floor(nfft_high / 2 * f_low / f_high)`` bins
    and resizes to the ``f_low`` input shape. Accepts one image or a stack.

    With ``normalized=True`` the input is a finished image and the result is
    re-clipped to [0, 1]. With ``normalized=False`` the input is a raw STFT
    magnitude and the percentile scaling is applied after the crop, over the
    same band a native ``f_low`` image covers. The second form is what
    :meth:`SessionStore.featurize` uses for ``transform_to``: scaling the full
    band first lets the empty high bins pull the percentile down, which makes
    cropped images brighter than native ones.
    """
    if not f_low < f_high:
        raise BadDirection(f"spectransform only lowers the rate ({f_high} -> {f_low})")
    hi, lo = rate_config(f_high), rate_config(f_low)
    s = np.asarray(spec, dtype=np.float64)
    if s.shape[-2:] != hi.out_shape:
        raise ShapeMismatch(f"expected {hi.out_shape} spectrogram at {f_high} Hz, got {s.shape[-2:]}")
    keep = int(math.floor(hi.fft_len / 2 * f_low / f_high + 1e-9))
    resized = bilinear_resize(s[..., :keep], lo.out_shape)
    if not normalized:
        return percentile_normalize(resized).astype(np.float32)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)
