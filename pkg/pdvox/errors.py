class PdvoxError(Exception):
    pass


class UsageError(PdvoxError):
    pass


class DataError(PdvoxError, ValueError):
    pass


class ShapeError(DataError):
    pass


class MvolFormatError(DataError):
    pass


class MvolMagicError(MvolFormatError):
    pass


class MvolTruncatedError(MvolFormatError):
    pass


class MvolNonFiniteError(MvolFormatError):
    pass


class ManifestError(DataError):
    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ZeroVarianceError(DataError):
    pass


class SplitError(DataError):
    pass


class NumericalError(PdvoxError, ArithmeticError):
    pass
