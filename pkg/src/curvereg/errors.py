"""Exception hierarchy.

Two error categories matter downstream: ``DataError`` (malformed or invalid
input, CLI exit code 3) and ``NumericError`` (a computation failed or
degenerated, CLI exit code 4). Everything else is a usage/programming error.
"""


class CurveregError(Exception):
    """Base class for all package errors."""


class DataError(CurveregError):
    """Invalid or malformed input data."""


class NumericError(CurveregError):
    """Numerical failure during estimation."""


# --- data / ingestion ---------------------------------------------------

class InvalidInput(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"required column {column!r} missing from header")
        self.column = column


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        super().__init__(f"non-numeric value {value!r} in column {column!r} at data row {row}")
        self.row = row
        self.column = column


class DuplicateTimeWithinCurve(DataError):
    def __init__(self, curve_id, t):
        super().__init__(f"duplicate time {t!r} within curve {curve_id!r}")
        self.curve_id = curve_id
        self.t = t


class CurveTooShort(DataError):
    def __init__(self, curve_id, n):
        super().__init__(f"curve {curve_id!r} has {n} samples; need at least 2")
        self.curve_id = curve_id


class EmptyDataset(DataError):
    pass


class InvalidObservation(DataError):
    """Observation incompatible with the requested family (e.g. Gamma y <= 0)."""


class GridMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


# --- domain / basis -----------------------------------------------------

class OutOfDomain(DataError):
    def __init__(self, t, lo, hi):
        super().__init__(f"evaluation point {t} outside [{lo}, {hi}]")
        self.t = t


class InvalidRange(DataError):
    pass


class InvalidDomain(DataError):
    pass


# --- numerics -----------------------------------------------------------

class NonFiniteInput(NumericError):
    pass


class NonFinite(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class DegenerateWeight(NumericError):
    """IRLS weight underflowed; caller should step-halve."""


class InfeasibleStart(NumericError):
    pass


class NonFiniteObjective(NumericError):
    pass


class DegenerateTemplate(NumericError):
    """Template mean derivative ~0 on the warped range: no registration signal."""


class IrlsDiverged(NumericError):
    pass


class NewtonDiverged(NumericError):
    def __init__(self, curve_id):
        super().__init__(f"score Newton iteration diverged for curve {curve_id!r}")
        self.curve_id = curve_id


class InsufficientOverlap(NumericError):
    """Too few populated off-diagonal covariance cells to smooth."""


class DerivativeUnderflow(NumericError):
    def __init__(self, t):
        super().__init__(f"response derivative underflows at t={t}")
        self.t = t


class NotSymmetric(NumericError):
    pass


class DegenerateBasis(DataError):
    pass
