from typing import Iterable


class ZOCertifyError(Exception):
    pass


class ConfigValidationError(ZOCertifyError, ValueError):
    """
    Raised with every problem found in a configuration, not only the first.
    """

    def __init__(self, errors: Iterable[str]):
        self.errors = list(errors)
        super().__init__(
            "Invalid configuration:\n"
            + "\n".join(f"  - {e}" for e in self.errors)
        )


class ShapeMismatchError(ZOCertifyError, ValueError):
    def __init__(self, operation, expected, actual):
        self.operation = operation
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"{operation}: shape mismatch, expected {self.expected} "
            f"but got {self.actual}"
        )


class NumericalError(ZOCertifyError, ArithmeticError):
    pass


class NonFiniteGradientError(NumericalError):
    pass


class EstimateAbortedError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, message, step, run_log=None):
        self.step = step
        self.run_log = run_log
        super().__init__(message)


class QueryRejectedError(ZOCertifyError, ValueError):
    pass


class FormatError(ZOCertifyError, ValueError):
    """Malformed checkpoint, IDX or CSV bytes; `offset` is where parsing stopped."""

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message)
