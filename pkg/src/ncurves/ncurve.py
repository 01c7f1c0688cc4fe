"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Bézier curves with Gaussian control points (N-Curves) and their mixtures.
"""

import functools
import math
import sys
from typing import Any, NamedTuple

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    field_serializer,
    field_validator,
    model_validator,
)
from scipy.special import comb, gammaln, logsumexp

from ncurves.errors import DimensionMismatch, OutOfRange, ShapeMismatch, TooShort
from ncurves.gaussian import (
    GaussianDist,
    affine_combine,
    log_density,
    sample,
    sampling_factor,
)
from ncurves.type_hints import Matrix, Seed, Sequence, SequenceBatch, as_generator

LOG_BINOMIAL_DEGREE = 30
"""Degrees above this use log-space binomial coefficients."""

WEIGHT_TOLERANCE = 1e-9


class NCurve(BaseModel):
    """
    Degree-N Bézier curve whose N+1 control points are Gaussian random variables.

    :param controls: ordered Gaussian control points sharing one dimension
    """

    model_config = ConfigDict(frozen=True)

    controls: tuple[GaussianDist, ...]

    @model_validator(mode="after")
    def check_controls(self) -> Self:
        if len(self.controls) < 1:
            raise ValueError("an N-Curve needs at least one control point")
        d = self.controls[0].dim
        for control in self.controls:
            if control.dim != d:
                raise ValueError(
                    f"control points must share dimension {d}, got {control.dim}"
                )
        return self

    @classmethod
    def from_arrays(cls, means: Any, covs: Any) -> "NCurve":
        """Build a curve from (N+1, d) means and (N+1, d, d) covariances."""
        means = np.asarray(means, dtype=np.float64)
        covs = np.asarray(covs, dtype=np.float64)
        if means.shape[0] != covs.shape[0]:
            raise ShapeMismatch(
                f"{means.shape[0]} control means for {covs.shape[0]} covariances"
            )
        return cls(
            controls=tuple(
                GaussianDist(mean=mean, cov=cov) for mean, cov in zip(means, covs)
            )
        )

    @property
    def degree(self) -> int:
        return len(self.controls) - 1

    @property
    def dim(self) -> int:
        return self.controls[0].dim

    @property
    def control_means(self) -> np.ndarray:
        return np.stack([control.mean for control in self.controls])

    @property
    def control_covs(self) -> np.ndarray:
        return np.stack([control.cov for control in self.controls])


class NCurveMixture(BaseModel):
    """
    K weighted N-Curves of equal degree and dimension.

    :param weights: non-negative mixing weights summing to one
    :param components: the K curves
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray
    components: tuple[NCurve, ...]

    @field_validator("weights", mode="before")
    @classmethod
    def coerce_weights(cls, value: Any) -> np.ndarray:
        weights = np.array(value, dtype=np.float64).reshape(-1)
        weights.setflags(write=False)
        return weights

    @model_validator(mode="after")
    def check_mixture(self) -> Self:
        if len(self.components) < 1:
            raise ValueError("a mixture needs at least one component")
        if self.weights.shape[0] != len(self.components):
            raise ValueError(
                f"{self.weights.shape[0]} weights for {len(self.components)} components"
            )
        if np.any(self.weights < 0.0):
            raise ValueError("mixture weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"mixture weights sum to {self.weights.sum()}, not 1")
        first = self.components[0]
        for component in self.components:
            if component.dim != first.dim or component.degree != first.degree:
                raise ValueError("components must share degree and dimension")
        return self

    @field_serializer("weights")
    def serialize_weights(self, value: np.ndarray):
        return value.tolist()

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def degree(self) -> int:
        return self.components[0].degree

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def __eq__(self, other: Any) -> bool:
        if isinstance(other, NCurveMixture):
            return (
                np.array_equal(self.weights, other.weights)
                and self.components == other.components
            )
        return False


class IndexGrid(BaseModel):
    """Sorted curve parameters in [0, 1]; sequence step i maps to ``values[i]``."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, value: Any) -> np.ndarray:
        values = np.array(value, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        return values

    @model_validator(mode="after")
    def check_values(self) -> Self:
        if self.values.shape[0] < 1:
            raise ValueError("index grid is empty")
        if self.values[0] < 0.0 or self.values[-1] > 1.0:
            raise ValueError("index grid values must lie in [0, 1]")
        if np.any(np.diff(self.values) <= 0.0):
            raise ValueError("index grid values must be strictly increasing")
        return self

    def __len__(self) -> int:
        return int(self.values.shape[0])


class Envelope(NamedTuple):
    """Mean and per-axis half-widths of the n-sigma region, one row per grid point."""

    means: np.ndarray
    half_widths: np.ndarray


@functools.lru_cache(maxsize=128)
def _binomials(degree: int) -> np.ndarray:
    i = np.arange(degree + 1)
    if degree > LOG_BINOMIAL_DEGREE:
        row = gammaln(degree + 1) - gammaln(i + 1) - gammaln(degree - i + 1)
    else:
        row = comb(degree, i)
    row.setflags(write=False)
    return row


def _check_t(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise OutOfRange(f"curve parameter t={t} outside [0, 1]")


def bernstein(i: int, degree: int, t: float) -> float:
    """Bernstein basis polynomial ``C(N, i) (1 - t)^(N - i) t^i``."""
    if degree < 0 or not 0 <= i <= degree:
        raise OutOfRange(f"basis index {i} outside [0, {degree}]")
    return float(bernstein_row(degree, t)[i])


def bernstein_row(degree: int, t: float) -> np.ndarray:
    """All N+1 Bernstein weights at ``t``; they sum to one."""
    if degree < 0:
        raise OutOfRange(f"degree {degree} is negative")
    _check_t(t)
    i = np.arange(degree + 1)
    if degree <= LOG_BINOMIAL_DEGREE:
        return _binomials(degree) * (1.0 - t) ** (degree - i) * t**i

    # log space; the endpoints are exact unit vectors
    if t == 0.0 or t == 1.0:
        row = np.zeros(degree + 1)
        row[0 if t == 0.0 else degree] = 1.0
        return row
    log_row = _binomials(degree) + (degree - i) * math.log1p(-t) + i * math.log(t)
    return np.exp(log_row)


def bernstein_matrix(degree: int, grid: "IndexGrid | Any") -> Matrix:
    """Stack of Bernstein rows, shape (n, N+1), for every grid value."""
    values = grid.values if isinstance(grid, IndexGrid) else np.asarray(grid)
    return np.stack([bernstein_row(degree, float(t)) for t in values])


def curve_at(c: NCurve, t: float) -> GaussianDist:
    """Gaussian of the curve point at ``t``: Bernstein-weighted means, squared weights on covariances."""
    return affine_combine(c.controls, bernstein_row(c.degree, t))


def curve_log_density(c: NCurve, t: float, x: Any) -> float | np.ndarray:
    return log_density(curve_at(c, t), x)


def mixture_at(m: NCurveMixture, t: float) -> tuple[np.ndarray, list[GaussianDist]]:
    """Weights and pointwise Gaussians of every component at ``t``."""
    return m.weights, [curve_at(component, t) for component in m.components]


def mixture_log_density(m: NCurveMixture, t: float, x: Any) -> float | np.ndarray:
    """``log sum_k pi_k N(x | mu_k(t), Sigma_k(t))``; zero-weight components are skipped."""
    weights, gaussians = mixture_at(m, t)
    terms = [
        math.log(weight) + np.asarray(log_density(g, x))
        for weight, g in zip(weights, gaussians)
        if weight > 0.0
    ]
    result = logsumexp(np.stack(terms), axis=0)
    if np.ndim(result) == 0:
        return float(result)
    return result


def uniform_grid(n: int) -> IndexGrid:
    """``n`` evenly spaced parameters ``v / (n - 1)``."""
    if n < 2:
        raise TooShort(n)
    return IndexGrid(values=np.arange(n, dtype=np.float64) / (n - 1))


def mean_curve(c: NCurve, grid: IndexGrid) -> Sequence:
    """Mean of the curve point at every grid value, shape (n, d)."""
    return bernstein_matrix(c.degree, grid) @ c.control_means


def sample_realizations(
    c: NCurve, grid: IndexGrid, rng: Seed, size: int
) -> SequenceBatch:
    """
    ``size`` smooth realizations, shape (size, n, d).

    Each realization draws one deterministic control polygon and evaluates the
    ordinary Bézier curve through it on the grid.
    """
    generator = as_generator(rng)
    basis = bernstein_matrix(c.degree, grid)
    polygons = np.empty((size, c.degree + 1, c.dim))
    for i, control in enumerate(c.controls):
        factor = sampling_factor(np.asarray(control.cov))
        z = generator.standard_normal((size, c.dim))
        polygons[:, i, :] = control.mean + z @ factor.T
    return np.einsum("ti,sid->std", basis, polygons)


def sample_realization(c: NCurve, grid: IndexGrid, rng: Seed) -> Sequence:
    """One smooth realization of the curve on ``grid``, shape (n, d)."""
    generator = as_generator(rng)
    polygon = np.stack([sample(control, generator) for control in c.controls])
    return bernstein_matrix(c.degree, grid) @ polygon


def sample_mixture_realization(
    m: NCurveMixture, grid: IndexGrid, rng: Seed
) -> tuple[int, Sequence]:
    """Pick a component by its weight, then draw one realization of it."""
    generator = as_generator(rng)
    k = int(generator.choice(m.k, p=m.weights))
    return k, sample_realization(m.components[k], grid, generator)


def envelope(c: NCurve, grid: IndexGrid, n_sigma: float) -> Envelope:
    """Mean and ``n_sigma * sqrt(diag(cov))`` at every grid value."""
    points = [curve_at(c, float(t)) for t in grid.values]
    means = np.stack([g.mean for g in points])
    stds = np.sqrt(np.clip(np.stack([np.diag(g.cov) for g in points]), 0.0, None))
    return Envelope(means=means, half_widths=n_sigma * stds)


def top_component(m: NCurveMixture) -> int:
    """Index of the highest-weight component; ties resolve to the lowest index."""
    return int(np.argmax(m.weights))


def fit_control_points(seq: Any, grid: IndexGrid, degree: int) -> np.ndarray:
    """Least-squares Bézier control polygon, shape (N+1, d), through a sampled sequence."""
    points = np.asarray(seq, dtype=np.float64)
    if points.shape[0] != len(grid):
        raise DimensionMismatch(
            expected=len(grid), actual=points.shape[0], what="sequence length"
        )
    basis = bernstein_matrix(degree, grid)
    polygon, *_ = np.linalg.lstsq(basis, points, rcond=None)
    return polygon


def check_sequences(sequences: Any, grid: IndexGrid, dim: int) -> np.ndarray:
    """Return ``sequences`` as an (M, n, d) float array or raise on shape errors."""
    batch = np.asarray(sequences, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[np.newaxis]
    if batch.ndim != 3:
        raise DimensionMismatch(expected=3, actual=batch.ndim, what="sequence rank")
    if batch.shape[1] != len(grid):
        raise DimensionMismatch(
            expected=len(grid), actual=batch.shape[1], what="sequence length"
        )
    if batch.shape[2] != dim:
        raise DimensionMismatch(expected=dim, actual=batch.shape[2])
    return batch


__all__ = [
    "NCurve",
    "NCurveMixture",
    "IndexGrid",
    "Envelope",
    "bernstein",
    "bernstein_row",
    "bernstein_matrix",
    "curve_at",
    "curve_log_density",
    "mixture_at",
    "mixture_log_density",
    "uniform_grid",
    "mean_curve",
    "sample_realization",
    "sample_realizations",
    "sample_mixture_realization",
    "envelope",
    "top_component",
    "fit_control_points",
    "check_sequences",
]
