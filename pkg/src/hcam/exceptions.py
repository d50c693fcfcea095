"""Exception types raised across the package."""


class HcamError(Exception):
    """Base class for package errors."""


class CyclicStructure(HcamError, ValueError):
    """A graph or hypergraph whose reduced DAG contains a directed cycle."""


class DimensionMismatch(HcamError, ValueError):
    pass


class InvalidDensity(HcamError, ValueError):
    pass


class DegenerateColumn(HcamError, ValueError):
    """A data column has too few distinct values to place spline knots."""


class SingularSystem(HcamError, ArithmeticError):
    pass


class UnknownTail(HcamError, KeyError):
    pass


class NumericalInstability(HcamError, ArithmeticError):
    pass


class DimensionGuard(HcamError, ValueError):
    """Exhaustive enumeration requested above the supported vertex count."""


class InvalidConfig(HcamError, ValueError):
    pass


class ParseError(HcamError, ValueError):
    pass
