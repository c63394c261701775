"""Exception hierarchy shared by every module of the engine."""


class Tiny3Error(Exception):
    """Base class for all errors raised by tiny3det."""


class InvalidShape(Tiny3Error, ValueError):
    pass


class IndexOutOfBounds(Tiny3Error, IndexError):
    pass


class ShapeMismatch(Tiny3Error, ValueError):
    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class MissingBatchNorm(Tiny3Error, ValueError):
    pass


class UnsupportedPool(Tiny3Error, ValueError):
    pass


class InvalidInputSize(Tiny3Error, ValueError):
    pass


class WeightCountMismatch(Tiny3Error, ValueError):
    def __init__(self, expected, actual):
        super().__init__(
            f"weight file holds {actual} floats, network needs {expected}")
        self.expected = expected
        self.actual = actual


class MalformedHeader(Tiny3Error, ValueError):
    pass


class LayoutMismatch(Tiny3Error, ValueError):
    pass


class InvalidBox(Tiny3Error, ValueError):
    pass


class InsufficientData(Tiny3Error, ValueError):
    pass


class InvalidAnchorCount(Tiny3Error, ValueError):
    pass


class NoGroundTruth(Tiny3Error, ValueError):
    pass


class UnsupportedFormat(Tiny3Error, ValueError):
    pass


class UnsupportedDepth(Tiny3Error, ValueError):
    pass


class TruncatedFile(Tiny3Error, ValueError):
    pass


class ParseError(Tiny3Error, ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class OutOfRange(Tiny3Error, ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
