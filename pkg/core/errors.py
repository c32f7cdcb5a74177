# core/errors.py
from __future__ import annotations

from typing import Iterable, Optional, Sequence


class LakeOptError(RuntimeError):
    exit_code = 1


# ----------------------------
# Input / configuration problems (exit 2)
# ----------------------------
class DataError(LakeOptError):
    exit_code = 2


class SchemaError(DataError):
    def __init__(self, column: str, *, path: Optional[str] = None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"Missing required column '{column}'{where}.")


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Cannot parse row {row}, column '{column}': {value!r}")


class IntegrityError(DataError):
    def __init__(self, message: str, *, rows: Sequence[int] = ()):
        self.rows = tuple(rows)
        super().__init__(message)


class CoverageError(DataError):
    def __init__(self, message: str, *, missing: Iterable[object] = ()):
        self.missing = tuple(missing)
        super().__init__(message)


class SizeError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DegenerateRangeError(DataError):
    def __init__(self, variable: str, value: float):
        self.variable = variable
        super().__init__(f"Variable '{variable}' is constant ({value!r}); min-max scaling is undefined.")


class UnknownVariableError(DataError):
    def __init__(self, variable: str, known: Iterable[str] = ()):
        self.variable = variable
        known = list(known)
        hint = f" Known: {known}" if known else ""
        super().__init__(f"Unknown variable '{variable}'.{hint}")


class ShapeError(DataError):
    pass


class FormatError(DataError):
    pass


class ConfigError(DataError):
    pass


class ParameterError(ConfigError):
    pass


class CapabilityError(ConfigError):
    pass


class DispatchError(ConfigError):
    pass


# ----------------------------
# Numerical failures (exit 3)
# ----------------------------
class NumericalError(LakeOptError):
    exit_code = 3


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, learning_rate: float):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"Training diverged at epoch {epoch} (learning_rate={learning_rate!r}): loss is not finite."
        )


class ConstantOutputError(NumericalError):
    pass


class UndefinedR2Error(NumericalError):
    pass


class SeasonDivisionError(NumericalError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, LakeOptError):
        return exc.exit_code
    return 1
