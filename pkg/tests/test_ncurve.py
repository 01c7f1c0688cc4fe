"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import math
import unittest

import numpy as np
import pytest
from parameterized import parameterized
from pydantic import ValidationError
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from ncurves import (
    DimensionMismatch,
    IndexGrid,
    NCurve,
    NCurveMixture,
    OutOfRange,
    ShapeMismatch,
    TooShort,
    bernstein,
    bernstein_row,
    curve_at,
    curve_log_density,
    envelope,
    mixture_log_density,
    sample_mixture_realization,
    sample_realization,
    uniform_grid,
)
from ncurves.ncurve import (
    bernstein_matrix,
    check_sequences,
    fit_control_points,
    mean_curve,
    sample_realizations,
    top_component,
)

from .libs.mixtures import isotropic_curve

CUBIC = isotropic_curve(
    [[0.0, 0.0], [1.0, 3.0], [3.0, -1.0], [5.0, 1.0]], [0.1, 0.5, 0.5, 0.2]
)


class BernsteinTest(unittest.TestCase):
    @parameterized.expand(
        [
            (f"degree_{degree}_t_{t}", degree, t)
            for degree in (0, 1, 3, 30, 31, 60)
            for t in (0.0, 0.3, 1.0)
        ]
    )
    def test_partition_of_unity(self, _, degree, t):
        row = bernstein_row(degree, t)
        self.assertEqual(row.shape, (degree + 1,))
        self.assertAlmostEqual(float(row.sum()), 1.0, 12)
        self.assertTrue(np.all(row >= 0.0))

    @parameterized.expand([("low", 30), ("high", 60)])
    def test_endpoints_are_unit_vectors(self, _, degree):
        np.testing.assert_allclose(bernstein_row(degree, 0.0), np.eye(degree + 1)[0])
        np.testing.assert_allclose(bernstein_row(degree, 1.0), np.eye(degree + 1)[degree])

    def test_values(self):
        self.assertAlmostEqual(bernstein(1, 3, 0.5), 0.375, 15)
        self.assertAlmostEqual(bernstein(0, 2, 0.25), 0.5625, 15)
        self.assertEqual(bernstein(0, 0, 0.7), 1.0)

    def test_log_space_matches_direct_form(self):
        t = 0.37
        direct = np.array([math.comb(40, i) * (1 - t) ** (40 - i) * t**i for i in range(41)])
        np.testing.assert_allclose(bernstein_row(40, t), direct, rtol=1e-10, atol=1e-300)

    @parameterized.expand(
        [
            ("t_above", 1, 3, 1.5),
            ("t_below", 1, 3, -0.1),
            ("index_above", 4, 3, 0.5),
            ("index_below", -1, 3, 0.5),
        ]
    )
    def test_out_of_range(self, _, i, degree, t):
        with pytest.raises(OutOfRange):
            bernstein(i, degree, t)

    def test_matrix_rows(self):
        grid = uniform_grid(4)
        matrix = bernstein_matrix(3, grid)
        self.assertEqual(matrix.shape, (4, 4))
        np.testing.assert_allclose(matrix[1], bernstein_row(3, 1.0 / 3.0))


class CurveAtTest(unittest.TestCase):
    def test_endpoints_are_control_points(self):
        first, last = curve_at(CUBIC, 0.0), curve_at(CUBIC, 1.0)
        np.testing.assert_allclose(first.mean, CUBIC.controls[0].mean)
        np.testing.assert_allclose(first.cov, CUBIC.controls[0].cov)
        np.testing.assert_allclose(last.mean, CUBIC.controls[-1].mean)
        np.testing.assert_allclose(last.cov, CUBIC.controls[-1].cov)

    def test_linear_midpoint(self):
        line = isotropic_curve([[0.0, 0.0], [2.0, 4.0]], [1.0, 3.0])
        middle = curve_at(line, 0.5)
        np.testing.assert_allclose(middle.mean, [1.0, 2.0])
        np.testing.assert_allclose(middle.cov, 0.25 * (1.0 + 9.0) * np.eye(2))

    def test_degree_zero_curve_is_constant(self):
        point = isotropic_curve([[1.0, 2.0]], [0.5])
        self.assertEqual(point.degree, 0)
        for t in (0.0, 0.4, 1.0):
            self.assertEqual(curve_at(point, t), point.controls[0])

    def test_mean_is_bezier_of_control_means(self):
        grid = uniform_grid(7)
        expected = bernstein_matrix(3, grid) @ CUBIC.control_means
        np.testing.assert_allclose(mean_curve(CUBIC, grid), expected)
        for i, t in enumerate(grid.values):
            np.testing.assert_allclose(curve_at(CUBIC, float(t)).mean, expected[i])

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            curve_at(CUBIC, 1.0001)

    def test_curve_log_density_matches_scipy(self):
        point = curve_at(CUBIC, 0.3)
        x = np.array([1.2, 1.0])
        expected = multivariate_normal(point.mean, point.cov).logpdf(x)
        self.assertAlmostEqual(curve_log_density(CUBIC, 0.3, x), expected, 10)

    def test_controls_share_dimension(self):
        with pytest.raises(ValidationError):
            NCurve(controls=(CUBIC.controls[0], isotropic_curve([[0.0]], [1.0]).controls[0]))


def test_mixture_density_is_weighted_log_sum(two_component_mixture):
    x = np.array([0.6, 0.9])
    terms = [
        math.log(w) + curve_log_density(c, 0.25, x)
        for w, c in zip(two_component_mixture.weights, two_component_mixture.components)
    ]
    assert mixture_log_density(two_component_mixture, 0.25, x) == pytest.approx(
        logsumexp(terms), rel=1e-12
    )


def test_single_component_mixture_reduces_to_curve():
    mixture = NCurveMixture(weights=[1.0], components=(CUBIC,))
    x = np.array([[2.0, 1.0], [2.5, 0.5]])
    np.testing.assert_allclose(
        mixture_log_density(mixture, 0.6, x), curve_log_density(CUBIC, 0.6, x), rtol=1e-12
    )


def test_zero_weight_component_is_ignored(two_component_mixture):
    only_first = NCurveMixture(
        weights=[1.0, 0.0], components=two_component_mixture.components
    )
    x = np.array([1.0, 1.0])
    assert mixture_log_density(only_first, 0.5, x) == pytest.approx(
        curve_log_density(two_component_mixture.components[0], 0.5, x), rel=1e-12
    )


def test_far_point_mixture_density_is_finite(two_component_mixture):
    value = mixture_log_density(two_component_mixture, 0.5, [500.0, -800.0])
    assert math.isfinite(value)


class MixtureValidationTest(unittest.TestCase):
    @parameterized.expand(
        [
            ("not_normalized", [0.5, 0.6]),
            ("negative", [1.5, -0.5]),
            ("wrong_count", [1.0]),
        ]
    )
    def test_rejects_weights(self, _, weights):
        with pytest.raises(ValidationError):
            NCurveMixture(weights=weights, components=(CUBIC, CUBIC))

    def test_rejects_mixed_degree(self):
        line = isotropic_curve([[0.0, 0.0], [1.0, 1.0]], [1.0, 1.0])
        with pytest.raises(ValidationError):
            NCurveMixture(weights=[0.5, 0.5], components=(CUBIC, line))

    def test_properties(self):
        mixture = NCurveMixture(weights=[0.25, 0.75], components=(CUBIC, CUBIC))
        self.assertEqual((mixture.k, mixture.degree, mixture.dim), (2, 3, 2))
        self.assertEqual(top_component(mixture), 1)

    def test_top_component_tie_picks_lowest_index(self):
        mixture = NCurveMixture(weights=[0.5, 0.5], components=(CUBIC, CUBIC))
        self.assertEqual(top_component(mixture), 0)


class IndexGridTest(unittest.TestCase):
    def test_uniform(self):
        np.testing.assert_array_equal(uniform_grid(5).values, [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual(len(uniform_grid(5)), 5)

    def test_too_short(self):
        with pytest.raises(TooShort) as err:
            uniform_grid(1)
        self.assertEqual(err.value.n, 1)

    def test_single_value_grid(self):
        self.assertEqual(len(IndexGrid(values=[0.4])), 1)

    @parameterized.expand(
        [
            ("decreasing", [0.5, 0.2]),
            ("repeated", [0.2, 0.2]),
            ("above_one", [0.5, 1.2]),
            ("below_zero", [-0.1, 0.5]),
            ("empty", []),
        ]
    )
    def test_rejects(self, _, values):
        with pytest.raises(ValidationError):
            IndexGrid(values=values)


class SamplingTest(unittest.TestCase):
    def test_same_seed_same_realization(self):
        grid = uniform_grid(11)
        first = sample_realization(CUBIC, grid, 42)
        np.testing.assert_array_equal(first, sample_realization(CUBIC, grid, 42))
        self.assertEqual(first.shape, (11, 2))
        self.assertFalse(np.array_equal(first, sample_realization(CUBIC, grid, 43)))

    def test_deterministic_controls_give_the_mean_curve(self):
        grid = uniform_grid(9)
        rigid = NCurve.from_arrays(CUBIC.control_means, np.zeros((4, 2, 2)))
        np.testing.assert_allclose(
            sample_realization(rigid, grid, 0), mean_curve(rigid, grid), atol=1e-12
        )

    def test_realizations_are_smooth_bezier_curves(self):
        grid = uniform_grid(12)
        draws = sample_realizations(CUBIC, grid, 3, 6)
        self.assertEqual(draws.shape, (6, 12, 2))
        for draw in draws:
            polygon = fit_control_points(draw, grid, 3)
            np.testing.assert_allclose(bernstein_matrix(3, grid) @ polygon, draw, atol=1e-9)

    def test_mixture_sampling_respects_weights(self):
        shifted = isotropic_curve(CUBIC.control_means + 10.0, [0.1, 0.5, 0.5, 0.2])
        mixture = NCurveMixture(weights=[0.0, 1.0], components=(CUBIC, shifted))
        generator = np.random.Generator(np.random.PCG64(9))
        picks = {
            sample_mixture_realization(mixture, uniform_grid(4), generator)[0]
            for _ in range(20)
        }
        self.assertEqual(picks, {1})


class EnvelopeTest(unittest.TestCase):
    def test_half_widths(self):
        line = isotropic_curve([[0.0, 0.0], [2.0, 4.0]], [1.0, 3.0])
        band = envelope(line, uniform_grid(3), 2.0)
        np.testing.assert_allclose(band.means, [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])
        expected = 2.0 * np.sqrt([1.0, 0.25 * 10.0, 9.0])
        np.testing.assert_allclose(band.half_widths, np.stack([expected, expected], axis=1))


class ControlPointFitTest(unittest.TestCase):
    def test_recovers_noise_free_polygon(self):
        grid = uniform_grid(10)
        sequence = mean_curve(CUBIC, grid)
        np.testing.assert_allclose(
            fit_control_points(sequence, grid, 3), CUBIC.control_means, atol=1e-10
        )

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fit_control_points(np.zeros((4, 2)), uniform_grid(5), 3)

    def test_check_sequences_promotes_single_sequence(self):
        self.assertEqual(check_sequences(np.zeros((5, 2)), uniform_grid(5), 2).shape, (1, 5, 2))
        with pytest.raises(DimensionMismatch):
            check_sequences(np.zeros((3, 5, 3)), uniform_grid(5), 2)


def test_from_arrays_rejects_count_mismatch():
    with pytest.raises(ShapeMismatch):
        NCurve.from_arrays(np.zeros((3, 2)), np.stack([np.eye(2)] * 2))


def test_mixture_draw_frequency_follows_weights(rng):
    shifted = isotropic_curve(CUBIC.control_means + 10.0, [0.1, 0.5, 0.5, 0.2])
    mixture = NCurveMixture(weights=[0.25, 0.75], components=(CUBIC, shifted))
    grid = uniform_grid(4)
    picks = np.array([sample_mixture_realization(mixture, grid, rng)[0] for _ in range(10000)])
    assert np.mean(picks == 0) == pytest.approx(0.25, abs=0.02)


def test_interior_variance_shrinks_below_control_variance(grid5):
    flat = isotropic_curve(CUBIC.control_means, 0.5)
    for t in grid5.values:
        point = curve_at(flat, float(t))
        weights = bernstein_row(3, float(t))
        np.testing.assert_allclose(point.cov, float(np.sum(weights**2)) * 0.25 * np.eye(2))
        if 0.0 < t < 1.0:
            assert np.trace(point.cov) < 0.5
        else:
            assert np.trace(point.cov) == pytest.approx(0.5, rel=1e-12)


def test_pointwise_covariances_stay_positive_definite(two_component_mixture):
    for component in two_component_mixture.components:
        for t in uniform_grid(101).values:
            eigenvalues = np.linalg.eigvalsh(curve_at(component, float(t)).cov)
            assert eigenvalues.min() > 0.0, f"t={t}"


def test_mixture_density_integrates_to_one(two_component_mixture):
    # component means at t=0.25 are (0.5, 0.75) and (-0.5, -0.75), spreads below 0.3
    axis = np.linspace(-4.0, 4.0, 801)
    grid_x, grid_y = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
    cell = (axis[1] - axis[0]) ** 2
    density = np.exp(mixture_log_density(two_component_mixture, 0.25, points))
    assert float(density.sum() * cell) == pytest.approx(1.0, abs=1e-6)
    single = np.exp(curve_log_density(two_component_mixture.components[0], 0.25, points))
    assert float(single.sum() * cell) == pytest.approx(1.0, abs=1e-6)


def test_density_at_sigma_floor_stays_finite():
    floor = 1e-4
    tight = NCurveMixture(
        weights=[0.5, 0.5],
        components=(
            isotropic_curve(CUBIC.control_means, floor),
            isotropic_curve(CUBIC.control_means + 1.0, floor),
        ),
    )
    value = mixture_log_density(tight, 0.5, [40.0, -40.0])
    assert math.isfinite(value)
    assert value < -1e9
