"""Exceptions raised by tlsxplain.

Every error is a `ValueError` so callers that only care about bad input
can keep catching that.
"""


class TlsXplainError(ValueError):
    ...


# capture
class CaptureError(TlsXplainError):

    def __init__(self, message: str, offset: int = -1):
        if offset >= 0:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(CaptureError):
    ...


class TruncatedHeader(CaptureError):
    ...


class UnsupportedFormat(CaptureError):
    ...


class UnsupportedLinkType(CaptureError):
    ...


class MalformedFrame(CaptureError):
    ...


# tls
class MalformedHello(TlsXplainError):
    ...


class MalformedDer(TlsXplainError):
    ...


# features
class SchemaMismatch(TlsXplainError):
    ...


# dataset
class DuplicateFamily(TlsXplainError):
    ...


class NonPositiveCount(TlsXplainError):
    ...


class TooFewSamples(TlsXplainError):
    ...


class DegenerateMinority(TlsXplainError):
    ...


# model
class EmptyData(TlsXplainError):
    ...


class SingleClass(TlsXplainError):
    ...


class DimensionMismatch(TlsXplainError):
    ...


class LengthMismatch(TlsXplainError):
    ...


class NonBinaryLabel(TlsXplainError):
    ...


# explain
class MissingCover(TlsXplainError):
    ...


class TooManyFeatures(TlsXplainError):
    ...


class EmptyInput(TlsXplainError):
    ...


class EfficiencyViolation(TlsXplainError):
    ...


# cli
class ConfigError(TlsXplainError):
    ...
