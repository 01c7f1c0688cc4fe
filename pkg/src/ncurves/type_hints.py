"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

from __future__ import annotations
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray
from pydantic import JsonValue

Vector: TypeAlias = NDArray[np.float64]
"""One d-dimensional sample or mean vector."""

Matrix: TypeAlias = NDArray[np.float64]
"""A d×d covariance matrix or an n×(N+1) Bernstein matrix."""

Sequence: TypeAlias = NDArray[np.float64]
"""One realization sampled on an index grid, shape (n, d)."""

SequenceBatch: TypeAlias = NDArray[np.float64]
"""M sequences stacked, shape (M, n, d)."""

Metadata: TypeAlias = dict[str, JsonValue]
"""Free-form JSON metadata attached to datasets, models and reports."""

Seed: TypeAlias = int | np.random.Generator
"""Either a 64-bit seed or an already constructed generator."""


def as_generator(rng: Seed) -> np.random.Generator:
    """Return ``rng`` unchanged when it is a generator, otherwise seed a new PCG64 generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(int(rng)))


__all__ = [
    "Vector",
    "Matrix",
    "Sequence",
    "SequenceBatch",
    "Metadata",
    "Seed",
    "as_generator",
]
