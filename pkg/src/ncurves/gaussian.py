"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Multivariate Gaussian value type shared by every other module.
"""

import logging
import math
from collections.abc import Sequence as SequenceABC
import sys
from typing import Any

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
import scipy.linalg
from pydantic import (
    BaseModel,
    ConfigDict,
    PrivateAttr,
    field_serializer,
    field_validator,
    model_validator,
)

from ncurves.errors import (
    DimensionMismatch,
    EmptyInput,
    NotPSD,
    NotPositiveDefinite,
)
from ncurves.type_hints import Matrix, Seed, Vector, as_generator

LOG_2PI = math.log(2.0 * math.pi)

JITTER_SCALE = 1e-9
"""Relative size of the diagonal jitter used for the single Cholesky retry."""

PSD_TOLERANCE = 1e-10
"""Eigenvalues above ``-PSD_TOLERANCE * trace`` are treated as zero when sampling."""


class GaussianDist(BaseModel):
    """
    A d-dimensional Gaussian with dense covariance.

    The covariance is symmetrized on construction and both arrays are stored
    read-only, so instances behave as immutable values.

    :param mean: mean vector, length d
    :param cov: covariance matrix, d×d
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray | None = PrivateAttr(default=None)

    @field_validator("mean", mode="before")
    @classmethod
    def coerce_mean(cls, value: Any) -> Vector:
        mean = np.array(value, dtype=np.float64).reshape(-1)
        mean.setflags(write=False)
        return mean

    @field_validator("cov", mode="before")
    @classmethod
    def coerce_cov(cls, value: Any) -> Matrix:
        cov = np.array(value, dtype=np.float64)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be a square matrix, got shape {cov.shape}")
        cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        return cov

    @model_validator(mode="after")
    def check_dimensions(self) -> Self:
        if self.mean.shape[0] != self.cov.shape[0]:
            raise ValueError(
                f"mean has length {self.mean.shape[0]} but covariance is "
                f"{self.cov.shape[0]}x{self.cov.shape[1]}"
            )
        return self

    @field_serializer("mean", "cov")
    def serialize_array(self, value: np.ndarray):
        return value.tolist()

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def cholesky(self) -> Matrix:
        """Lower Cholesky factor of the covariance, computed once per instance."""
        if self._chol is None:
            self._chol = cholesky_factor(self.cov)
        return self._chol

    def __eq__(self, other: Any) -> bool:
        if isinstance(other, GaussianDist):
            return np.array_equal(self.mean, other.mean) and np.array_equal(
                self.cov, other.cov
            )
        return False

    def __hash__(self) -> int:
        return hash((self.mean.tobytes(), self.cov.tobytes()))


def cholesky_factor(cov: Matrix) -> Matrix:
    """
    Lower Cholesky factor of ``cov``.

    A failing factorization is retried once on ``cov + εI`` with
    ``ε = 1e-9 * trace(cov) / d`` before giving up.

    :raises NotPositiveDefinite: when both attempts fail
    """
    try:
        return scipy.linalg.cholesky(cov, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        pass

    d = cov.shape[0]
    eps = JITTER_SCALE * float(np.trace(cov)) / d
    if not math.isfinite(eps) or eps <= 0.0:
        raise NotPositiveDefinite()
    logging.debug("cholesky retry with jitter %.3e", eps)
    try:
        return scipy.linalg.cholesky(cov + eps * np.eye(d), lower=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NotPositiveDefinite() from e


def sampling_factor(cov: Matrix) -> Matrix:
    """
    A factor ``L`` with ``L @ L.T == cov`` that tolerates singular covariances.

    Positive definite matrices use the Cholesky factor; semi-definite ones fall
    back to a symmetric eigen-factor with round-off negative eigenvalues clipped.

    :raises NotPSD: when ``cov`` has a clearly negative eigenvalue
    """
    try:
        return scipy.linalg.cholesky(cov, lower=True)
    except (np.linalg.LinAlgError, ValueError):
        pass

    if not np.all(np.isfinite(cov)):
        raise NotPSD()
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    scale = max(float(np.trace(np.abs(cov))), np.finfo(np.float64).tiny)
    if eigenvalues.min() < -PSD_TOLERANCE * scale:
        raise NotPSD()
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def log_density(g: GaussianDist, x: Any) -> float | np.ndarray:
    """
    Log density ``ln N(x | mean, cov)`` computed through the Cholesky factor.

    :param g: the Gaussian
    :param x: one point of length d, or an (m, d) array of points
    :return: a float for a single point, an array of m values otherwise
    """
    points = np.asarray(x, dtype=np.float64)
    if points.shape[-1] != g.dim:
        raise DimensionMismatch(expected=g.dim, actual=points.shape[-1])

    chol = g.cholesky()
    diff = np.atleast_2d(points) - g.mean
    z = scipy.linalg.solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(z * z, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    values = -0.5 * (g.dim * LOG_2PI + log_det + maha)
    if points.ndim == 1:
        return float(values[0])
    return values


def mahalanobis(g: GaussianDist, x: Any) -> float | np.ndarray:
    """Mahalanobis distance of ``x`` (one point or an (m, d) array) from ``g``."""
    points = np.asarray(x, dtype=np.float64)
    if points.shape[-1] != g.dim:
        raise DimensionMismatch(expected=g.dim, actual=points.shape[-1])
    diff = np.atleast_2d(points) - g.mean
    z = scipy.linalg.solve_triangular(g.cholesky(), diff.T, lower=True)
    distances = np.sqrt(np.sum(z * z, axis=0))
    if points.ndim == 1:
        return float(distances[0])
    return distances


def sample(g: GaussianDist, rng: Seed, size: int | None = None) -> np.ndarray:
    """
    Draw ``mean + L z`` with ``z`` standard normal.

    :param g: the Gaussian
    :param rng: seeded generator, advanced in place
    :param size: number of draws; ``None`` returns a single vector
    """
    generator = as_generator(rng)
    factor = sampling_factor(np.asarray(g.cov))
    if size is None:
        z = generator.standard_normal(g.dim)
        return g.mean + factor @ z
    z = generator.standard_normal((size, g.dim))
    return g.mean + z @ factor.T


def affine_combine(
    gs: SequenceABC[GaussianDist], weights: SequenceABC[float] | np.ndarray
) -> GaussianDist:
    """
    Distribution of ``sum_i w_i X_i`` for independent ``X_i ~ gs[i]``.

    Weights act as scalar matrices, so the covariance is ``sum_i w_i^2 cov_i``.
    """
    if len(gs) == 0:
        raise EmptyInput("affine_combine needs at least one Gaussian")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != len(gs):
        raise DimensionMismatch(expected=len(gs), actual=w.shape[0], what="weight count")
    d = gs[0].dim
    for g in gs:
        if g.dim != d:
            raise DimensionMismatch(expected=d, actual=g.dim)

    means = np.stack([g.mean for g in gs])
    covs = np.stack([g.cov for g in gs])
    return GaussianDist(
        mean=np.tensordot(w, means, axes=1),
        cov=np.tensordot(w * w, covs, axes=1),
    )


__all__ = [
    "GaussianDist",
    "cholesky_factor",
    "sampling_factor",
    "log_density",
    "mahalanobis",
    "sample",
    "affine_combine",
]
