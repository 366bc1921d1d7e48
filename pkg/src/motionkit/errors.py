"""Exception hierarchy.

Anything deriving from :class:`DataError` is a problem with the inputs (bad
files, incompatible shapes, empty datasets); the CLI maps those to exit code 2.
"""

from __future__ import annotations


class MotionKitError(Exception):
    pass


class DataError(MotionKitError, ValueError):
    pass


# ingest
class MalformedManifest(DataError):
    pass


class MalformedLabels(DataError):
    pass


class DuplicateLocation(DataError):
    pass


class EmptySignal(DataError):
    pass


class BadMagic(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class TruncatedPayload(DataError):
    pass


# features
class TooShort(DataError):
    pass


class BadFrameLength(DataError):
    pass


class UnsupportedRate(DataError):
    pass


class BadDirection(DataError):
    pass


# nn
class FusedMissing(MotionKitError):
    pass


class DegenerateBN(MotionKitError):
    pass


# synthesis
class NoAlignedPairs(DataError):
    pass


class UntrainedSynthesizer(MotionKitError):
    pass


# harness
class EmptyDataset(DataError):
    pass


class MixedRates(DataError):
    pass


class TooFewUsers(DataError):
    pass


class MissingLocation(DataError):
    pass


class WindowTooSmall(DataError):
    pass
