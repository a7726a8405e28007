"""Exception types shared across the package."""


class DumboError(Exception):
    """Base class for all package-specific errors."""


class UncoveredDimension(DumboError):
    def __init__(self, dim):
        self.dim = dim
        super().__init__(f"dimension {dim + 1} is not covered by any factor")


class EmptyFactor(DumboError):
    def __init__(self, factor):
        self.factor = factor
        super().__init__(f"factor {factor + 1} is empty")


class IndexOutOfRange(DumboError):
    def __init__(self, factor, dim):
        self.factor = factor
        self.dim = dim
        super().__init__(
            f"factor {factor + 1} references dimension {dim + 1}, outside 1..d"
        )


class DuplicateFactor(DumboError):
    def __init__(self, first, second):
        self.first = first
        self.second = second
        super().__init__(
            f"factors {first + 1} and {second + 1} have identical index sets"
        )


class ArityMismatch(DumboError):
    pass


class UnsupportedFamily(DumboError):
    pass


class SingularGram(DumboError):
    pass


class ShapeMismatch(DumboError):
    pass


class MissingFactorOutputs(DumboError):
    pass


class RowSumViolation(DumboError):
    pass


class AllZeroVariance(DumboError):
    pass


class InvalidDelta(DumboError):
    pass


class NegativeLipschitz(DumboError):
    pass


class NonFiniteGradient(DumboError):
    pass


class OutOfDomain(DumboError):
    pass


class ParseError(DumboError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class UnknownKey(DumboError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown config key: {name}")


class IncompatibleVariant(DumboError):
    pass
