"""Exception hierarchy shared across the toolkit.

Every error raised on purpose derives from :class:`WavecompError`, so the
command line can map them all to exit code 1 with one handler.
"""

from __future__ import annotations


class WavecompError(Exception):
    """Base class for all toolkit errors."""


# wavelet

class EmptyImage(WavecompError, ValueError):
    pass


class TooManyLevels(WavecompError, ValueError):
    pass


class ShapeMismatch(WavecompError, ValueError):
    pass


class BadResolution(WavecompError, ValueError):
    pass


# codec

class CodecError(WavecompError):
    pass


class BadMagic(CodecError):
    pass


class UnsupportedVersion(CodecError):
    pass


class CorruptHeader(CodecError):
    pass


class TruncatedStream(CodecError):
    def __init__(self, message: str, packet: int | None = None):
        super().__init__(message)
        self.packet = packet


class CorruptBlock(CodecError):
    def __init__(self, message: str, packet: int | None = None,
                 block: int | None = None):
        super().__init__(message)
        self.packet = packet
        self.block = block


class StreamWriteFailure(CodecError):
    pass


# archive

class EmptyClass(WavecompError):
    pass


class UnreadableImage(WavecompError):
    pass


class DuplicateStem(WavecompError):
    pass


class FractionOutOfRange(WavecompError, ValueError):
    pass


class ManifestError(WavecompError):
    pass


# tensor engine / classifier

class NonFiniteError(WavecompError, FloatingPointError):
    pass


class CheckpointError(WavecompError):
    pass


class InputTooSmall(WavecompError, ValueError):
    pass


class NonFiniteLoss(WavecompError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class GeometryMismatch(WavecompError):
    pass


class ConfigError(WavecompError, ValueError):
    pass


# metrics / bench

class EmptyMatrix(WavecompError, ValueError):
    pass


class NonPositiveTime(WavecompError, ValueError):
    pass


class BadLevel(WavecompError, ValueError):
    pass
