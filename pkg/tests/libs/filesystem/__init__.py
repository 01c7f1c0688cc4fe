"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Locate and load files kept under the test suite's data/ directories.
"""

import inspect
import pathlib
import typing

import pytest

from .. import exceptions
from . import decoders


def _data_directories(pytest_request: pytest.FixtureRequest) -> tuple[pathlib.Path, ...]:
    code_construct = getattr(pytest_request, "cls", None) or pytest_request.function
    return (
        pathlib.Path(__file__).parent.parent.parent.joinpath("data"),
        pathlib.Path(inspect.getfile(code_construct)).parent.joinpath("data"),
    )


def data_locator_factory(
    pytest_request: pytest.FixtureRequest,
) -> typing.Callable[[typing.Union[str, pathlib.Path]], pathlib.Path]:
    """Get a function resolving a file name against the data/ directories.

    A name is looked up under tests/data/ first and then under the data/ directory
    next to the requesting test module. An existing path is returned as is.

    Use:
        path = data_path("ragged.jsonl")
        with pytest.raises(RaggedSequence):
            load_sequences(path)
    """
    directories = _data_directories(pytest_request)

    def locate(file_name: typing.Union[str, pathlib.Path]) -> pathlib.Path:
        candidate = pathlib.Path(file_name)
        if candidate.is_file():
            return candidate
        for location in directories:
            if (found := location.joinpath(candidate)).is_file():
                return found
        raise exceptions.TestDataError(str(file_name), directories)

    return locate


def data_loader_factory(
    pytest_request: pytest.FixtureRequest,
) -> typing.Callable[[typing.Union[str, pathlib.Path]], typing.Any]:
    """Get a function that finds a data file and returns its decoded contents.

    Use:
        cases = data_loader("metric_cases.yaml")
        print(cases["fde"]["expected"])
    """
    locate = data_locator_factory(pytest_request)

    def loader(file_name: typing.Union[str, pathlib.Path]) -> typing.Any:
        return decoders.decode_file(locate(file_name))

    return loader
