"""Exception hierarchy shared across modules."""


class RatsError(Exception):
    pass


# cell model
class CellError(RatsError, ValueError):
    pass


class CycleError(CellError):
    pass


class ShapeError(CellError):
    pass


class TerminalError(CellError):
    pass


class OneHotError(CellError):
    pass


class UnknownOpError(CellError, KeyError):
    pass


# autodiff
class ShapeMismatchError(RatsError, ValueError):
    pass


class NonFiniteError(RatsError, FloatingPointError):
    pass


class NotScalarError(RatsError, ValueError):
    pass


# predictors / metrics / search
class EmptyPoolError(RatsError, ValueError):
    pass


class LengthMismatchError(RatsError, ValueError):
    pass


class TooShortError(RatsError, ValueError):
    pass


class KTooLargeError(RatsError, ValueError):
    pass


class DuplicateIdError(RatsError, ValueError):
    pass


class ExhaustedIntervalError(RatsError):
    """Fewer than k unsampled entries remain in the focus interval."""


# bench io
class ParseError(RatsError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(RatsError, ValueError):
    def __init__(self, message: str, cell_id: str | None = None):
        self.cell_id = cell_id
        super().__init__(f"cell {cell_id!r}: {message}" if cell_id is not None else message)


class SpecError(RatsError, ValueError):
    pass


class UnknownCellError(RatsError, KeyError):
    pass
