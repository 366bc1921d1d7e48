"""Location-invariant motion activity recognition from accelerometer
spectrogram images."""

__version__ = "0.1.0"
