"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class NCurveError(Exception):
    """
    Error raised by any ncurves operation.

    :param exit_code: process exit code the command line maps this error to
    :param detail: Error message
    :param messages: Optional list of error messages
    """

    exit_code: int
    detail: str
    messages: list[str] = []

    def __init__(self, exit_code: int, detail: str, messages: list[str] | None = None):
        self.exit_code = exit_code
        self.detail = detail
        if messages is not None:
            self.messages = messages
        super().__init__(detail)

    def json_error(self):
        if self.messages and len(self.messages) > 0:
            json_error = {"detail": self.detail, "messages": self.messages}
        else:
            json_error = {"detail": self.detail}
        return json.dumps(json_error)


class UsageError(NCurveError):
    def __init__(self, detail: str, messages: list[str] | None = None):
        super().__init__(exit_code=EXIT_USAGE, detail=detail, messages=messages)


class DataError(NCurveError):
    """Input data or arguments do not fit the model they are used with."""

    def __init__(self, detail: str, messages: list[str] | None = None):
        super().__init__(exit_code=EXIT_DATA, detail=detail, messages=messages)


class DimensionMismatch(DataError):
    def __init__(self, expected: int, actual: int, what: str = "dimension"):
        self.expected = expected
        self.actual = actual
        super().__init__(detail=f"{what} mismatch: expected {expected}, got {actual}")


class ShapeMismatch(DataError):
    def __init__(self, detail="parameter vector does not match the mixture layout"):
        super().__init__(detail=detail)


class EmptyInput(DataError):
    def __init__(self, detail="at least one input is required"):
        super().__init__(detail=detail)


class EmptyDataset(EmptyInput):
    def __init__(self, detail="dataset contains no sequences"):
        super().__init__(detail=detail)


class OutOfRange(DataError):
    def __init__(self, detail: str):
        super().__init__(detail=detail)


class TooShort(DataError):
    def __init__(self, n: int):
        self.n = n
        super().__init__(detail=f"index grid needs at least 2 points, got {n}")


class ParseError(DataError):
    def __init__(self, line: int, detail: str = "unable to parse line"):
        self.line = line
        super().__init__(detail=f"line {line}: {detail}")


class RaggedSequence(DataError):
    def __init__(self, line: int, detail: str = "inconsistent sequence shape"):
        self.line = line
        super().__init__(detail=f"line {line}: {detail}")


class EmptyFile(DataError):
    def __init__(self, path: str):
        super().__init__(detail=f"{path} contains no sequences")


class ModelFileError(DataError):
    def __init__(
        self,
        detail="invalid model file",
        messages: list[str] | None = None,
    ):
        super().__init__(detail=detail, messages=messages)


class NumericalError(NCurveError):
    """A computation produced a degenerate or non-finite result."""

    def __init__(self, detail: str, messages: list[str] | None = None):
        super().__init__(exit_code=EXIT_NUMERICAL, detail=detail, messages=messages)


class NotPositiveDefinite(NumericalError):
    def __init__(self, detail="covariance matrix is not positive definite"):
        super().__init__(detail=detail)


class NotPSD(NumericalError):
    def __init__(self, detail="covariance matrix is not positive semi-definite"):
        super().__init__(detail=detail)


class NonFiniteLoss(NumericalError):
    """
    Training produced a non-finite negative log-likelihood.

    :param iteration: optimizer step at which the loss was observed
    :param component: first mixture component with a non-finite density, if located
    :param t_index: first grid index with a non-finite density, if located
    """

    def __init__(
        self,
        iteration: int,
        component: int | None = None,
        t_index: int | None = None,
    ):
        self.iteration = iteration
        self.component = component
        self.t_index = t_index
        super().__init__(
            detail=f"non-finite loss at iteration {iteration}",
            messages=[f"component={component}", f"t_index={t_index}"],
        )


__all__ = [
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DATA",
    "EXIT_NUMERICAL",
    "NCurveError",
    "UsageError",
    "DataError",
    "DimensionMismatch",
    "ShapeMismatch",
    "EmptyInput",
    "EmptyDataset",
    "OutOfRange",
    "TooShort",
    "ParseError",
    "RaggedSequence",
    "EmptyFile",
    "ModelFileError",
    "NumericalError",
    "NotPositiveDefinite",
    "NotPSD",
    "NonFiniteLoss",
]
