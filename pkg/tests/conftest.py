"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Shared fixtures: data file access and a few small reference mixtures.
"""

import pathlib
import sys
import unittest

# - python pathing magic to add the test suite to path
sys.path.insert(0, str(pathlib.Path(__file__).parent.parent))

import numpy as np
import pytest

from ncurves import IndexGrid, NCurveMixture, uniform_grid

from .libs.filesystem import data_loader_factory, data_locator_factory
from .libs.mixtures import mixture_from_record


# - fixtures
@pytest.fixture(scope="class")
def class_data_loader(request):
    """Add a static ``data_loader`` to a unittest.TestCase class.

    Use:
        @pytest.mark.usefixtures("class_data_loader")
        class TestFeature(unittest.TestCase):
            def test_feature(self):
                cases = self.data_loader("metric_cases.yaml")
    """
    data_loader = data_loader_factory(request)

    def staticmethod_data_loader(_: unittest.TestCase, file_name: str):
        """Dereference the 'self' pass in the "method" call for the overwrite making it a staticmethod."""
        return data_loader(file_name)

    request.cls.data_loader = staticmethod_data_loader


@pytest.fixture
def data_loader(request):
    """Load and decode, by extension, a file under a data/ directory.

    Use:
        def test_foo(data_loader):
            record = data_loader("two_component_mixture.yaml")
    """
    return data_loader_factory(request)


@pytest.fixture
def data_path(request):
    """Resolve a file name under a data/ directory to its path, without decoding it."""
    return data_locator_factory(request)


@pytest.fixture
def two_component_mixture(data_loader) -> NCurveMixture:
    """Quadratic, planar, two-component mixture with full control covariances."""
    return mixture_from_record(data_loader("two_component_mixture.yaml"))


@pytest.fixture
def grid5() -> IndexGrid:
    return uniform_grid(5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20240611))
