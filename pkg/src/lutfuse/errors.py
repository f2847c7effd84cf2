"""Exception hierarchy. Each class carries the process exit code used by the CLI."""


class LutFuseError(Exception):
    exit_code = 1


class FileMissingError(LutFuseError):
    exit_code = 3


class DecodeError(LutFuseError):
    exit_code = 4


class UnsupportedBitDepthError(DecodeError):
    exit_code = 5


class DimensionMismatchError(LutFuseError):
    exit_code = 6


class ImageTooSmallError(LutFuseError):
    exit_code = 7


class EmptyDatasetError(LutFuseError):
    exit_code = 8


class ConfigError(LutFuseError):
    exit_code = 9


class ModelFormatError(LutFuseError):
    exit_code = 10


class BadMagicError(ModelFormatError):
    exit_code = 11


class UnsupportedVersionError(ModelFormatError):
    exit_code = 12


class TruncatedFileError(ModelFormatError):
    exit_code = 13


class ChecksumMismatchError(ModelFormatError):
    exit_code = 14


class NonFiniteError(LutFuseError):
    exit_code = 15


class ShapeMismatchError(LutFuseError):
    exit_code = 16
