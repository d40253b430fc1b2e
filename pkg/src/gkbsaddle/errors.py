"""Exception types raised across the package."""


class GkbError(Exception):
    """Base class for errors raised by gkbsaddle."""


class DimensionMismatchError(GkbError, ValueError):
    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch in {what}: expected {expected}, got {got}")


class NotPositiveDefiniteError(GkbError, ArithmeticError):
    """An operator that must be SPD produced a nonpositive quadratic form or pivot."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class IllConditionedError(NotPositiveDefiniteError):
    """Factorization succeeded only nominally; the pivots span more than the usable range."""


class SymmetryError(GkbError, ValueError):
    def __init__(self, deviation, tol):
        self.deviation = deviation
        self.tol = tol
        super().__init__(f"matrix is not symmetric: max |M - M^T| = {deviation:.3e} > {tol:.3e}")


class ZeroDiagonalError(GkbError, ValueError):
    def __init__(self, what, indices):
        self.indices = list(indices)
        shown = ", ".join(str(i) for i in self.indices[:10])
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"nonpositive diagonal entries in {what} at indices {shown}{more}")


class MatrixMarketError(GkbError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class MemoryGuardError(GkbError, MemoryError):
    pass
