from typing import Optional


class ActionRNNError(Exception):
    pass


class ContractViolation(ActionRNNError, ValueError):
    """Precondition or shape contract broken by the caller."""


class NumericError(ActionRNNError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class DataError(ActionRNNError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ActionRNNError):
    def __init__(self, message: str, field: Optional[str] = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class TrainingDiverged(NumericError):
    def __init__(self, message: str, iteration: int, last_good=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.last_good = last_good
