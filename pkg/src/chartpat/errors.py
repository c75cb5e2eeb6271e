"""Exception types shared across the package.

Everything derives from ``ValidationError`` (a ``ValueError``) so callers and the
CLI can treat bad input uniformly; I/O failures stay as ``OSError``.
"""


class ValidationError(ValueError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {reason}" if reason else ""))


class NonMonotonicTimestamp(ValidationError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"timestamp not strictly increasing at line {line}")


class EmptyFile(ValidationError):
    pass


class LengthExceedsSeries(ValidationError):
    pass


class EmptyChannelSet(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class NoPositives(ValidationError):
    pass


class NoNegatives(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class BadDimensions(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    def __init__(self, msg: str, layer: int | None = None):
        self.layer = layer
        super().__init__(msg if layer is None else f"layer {layer}: {msg}")


class StaleCache(ValidationError):
    pass


class WindowTooShort(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class UnresolvedAudits(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class MissingCompletionAnchor(ValidationError):
    pass


class SpanOutOfRange(ValidationError):
    pass


class OverlapWithExistingInjection(ValidationError):
    pass
