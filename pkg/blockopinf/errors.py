"""Exception types shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it, the same
way the service layer maps failures onto HTTP status codes.
"""

from typing import Any, List, Optional


class BlockOpInfError(Exception):
    exit_code: int = 3

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(BlockOpInfError):
    exit_code = 1


class MissingInputError(BlockOpInfError):
    exit_code = 2


class NumericError(BlockOpInfError):
    exit_code = 3


class DomainError(NumericError):
    pass


class ShapeError(NumericError):
    pass


class InvalidDimensionError(ShapeError):
    pass


class DegenerateError(NumericError):
    pass


class InsufficientDataError(NumericError):
    pass


class FormatError(MissingInputError):
    """Malformed binary container; `offset` is the byte where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TruncationError(FormatError):
    pass


class BlowUpError(NumericError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class NoFeasiblePointError(BlockOpInfError):
    exit_code = 4

    def __init__(self, message: str, log: Optional[List[Any]] = None):
        super().__init__(message)
        self.log = log or []


class RankDeficiencyWarning(UserWarning):
    """Unregularized least-squares problem without full column rank."""
