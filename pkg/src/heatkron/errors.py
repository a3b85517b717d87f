"""Exception types raised by the solvers and factorizations."""


class HeatKronError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HeatKronError, ValueError):
    pass


class BandStructureError(HeatKronError, ValueError):
    """A dense matrix has nonzeros outside the declared band."""


class SingularFactorizationError(HeatKronError, ArithmeticError):
    """Zero or near-zero pivot met while factorizing without pivoting."""

    def __init__(self, index, pivot, batch=None):
        self.index = index
        self.pivot = pivot
        self.batch = batch
        where = f" (block {batch})" if batch is not None else ""
        super().__init__(f"near-zero pivot {pivot:.3e} at index {index}{where}")


class SingularBlockError(HeatKronError, ArithmeticError):
    """A block of the transformed system is (numerically) singular."""


class NotPositiveDefiniteError(HeatKronError, ValueError):
    pass


class DefectivePencilError(HeatKronError, ArithmeticError):
    """The pencil has no numerically usable eigenvector basis."""

    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"defective pencil: eigenvector condition number {cond:.3e}")


class PositivityError(HeatKronError, ValueError):
    """A quantity that the time basis ordering guarantees positive is not."""


class GeometryError(HeatKronError, ValueError):
    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)
