"""Exception types.

Everything raised for bad input data derives from :class:`DataError`; the
CLI maps those to exit status 2.
"""


class MicroquantError(Exception):
    pass


class DataError(MicroquantError, ValueError):
    pass


class UnknownColor(DataError):
    def __init__(self, x, y, rgb):
        self.x, self.y, self.rgb = int(x), int(y), tuple(int(c) for c in rgb)
        super().__init__(f"pixel ({self.x}, {self.y}) has color {self.rgb} not in palette")


class EmptyImage(DataError):
    pass


class BadMagic(DataError):
    pass


class DimensionOverflow(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class NormalizationViolation(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NoTrainRegion(DataError):
    pass


class InsufficientPoints(DataError):
    pass


class StageError(MicroquantError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
