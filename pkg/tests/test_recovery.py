"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Toy-model recoveries. These fit full datasets and run for minutes; select them
with ``pytest -m slow``.
"""

import unittest

import numpy as np
import pytest

from ncurves import (
    FitConfig,
    NCurveMixture,
    curve_at,
    fit_conditional,
    fit_unconditional,
    gen_toy2,
    gen_toy3,
    gen_toy4,
    gen_toy5,
    match_components,
    predict,
    uniform_grid,
)
from ncurves.datagen import FanConfig, TwoCurveConfig
from ncurves.metrics import assign_components, control_point_rmse
from ncurves.ncurve import mean_curve, top_component
from ncurves.parameters import EncoderConfig

from .libs.mixtures import isotropic_curve

# full-batch budget shared by the unconditional recoveries
BUDGET = dict(learning_rate=2e-2, max_iters=3000, batch_size=1000, log_every=1000)


def two_curve_reference(config: TwoCurveConfig) -> NCurveMixture:
    return NCurveMixture(
        weights=[config.p_a, 1.0 - config.p_a],
        components=(
            isotropic_curve(config.curve_a, config.noise),
            isotropic_curve(config.curve_b, config.noise),
        ),
    )


@pytest.mark.slow
class TwoComponentRecoveryTest(unittest.TestCase):
    def test_toy4_weights_and_polygons(self):
        truth, dataset = gen_toy4(4)
        cfg = FitConfig(k=2, controls=4, n=dataset.n, seed=4, **BUDGET)
        mixture, _ = fit_unconditional(dataset.sequences, dataset.grid(), cfg)

        assignment = match_components(mixture, truth)
        np.testing.assert_allclose(mixture.weights[assignment], truth.weights, atol=0.05)
        self.assertLessEqual(control_point_rmse(mixture, truth, assignment), 0.5)

    def test_toy3_structured_is_bimodal(self):
        config = TwoCurveConfig()
        dataset = gen_toy3(3, structured=True, config=config)
        grid = dataset.grid()
        cfg = FitConfig(k=2, controls=4, n=dataset.n, seed=3, **BUDGET)
        mixture, _ = fit_unconditional(dataset.sequences, grid, cfg)

        reference = two_curve_reference(config)
        assignment = match_components(mixture, reference)
        np.testing.assert_allclose(mixture.weights[assignment], [0.5, 0.5], atol=0.05)
        for label, k in enumerate(assignment):
            members = dataset.sequences[dataset.labels == label]
            np.testing.assert_allclose(
                mean_curve(mixture.components[k], grid), members.mean(axis=0), atol=0.1
            )

    def test_toy3_unstructured_collapses(self):
        config = TwoCurveConfig()
        dataset = gen_toy3(3, structured=False, config=config)
        grid = dataset.grid()
        cfg = FitConfig(k=2, controls=4, n=dataset.n, seed=3, **BUDGET)
        mixture, _ = fit_unconditional(dataset.sequences, grid, cfg)

        # either one weight vanishes or both components describe the same curve
        first, second = (c.control_means for c in mixture.components)
        spread = np.sqrt(np.mean((first - second) ** 2))
        collapsed = mixture.weights.min() < 0.05 or spread < 0.2
        self.assertTrue(collapsed, f"weights={mixture.weights}")

        survivor = mixture.components[top_component(mixture)]
        reference = two_curve_reference(config)
        average = 0.5 * sum(mean_curve(c, grid) for c in reference.components)
        np.testing.assert_allclose(mean_curve(survivor, grid), average, atol=0.15)


@pytest.mark.slow
def test_toy5_superfluous_components_share_the_weight():
    config = TwoCurveConfig()
    dataset = gen_toy5(5, config)
    cfg = FitConfig(k=7, controls=4, n=dataset.n, seed=5, **BUDGET)
    mixture, _ = fit_unconditional(dataset.sequences, dataset.grid(), cfg)

    owners = assign_components(mixture, two_curve_reference(config))
    totals = [float(mixture.weights[owners == label].sum()) for label in (0, 1)]
    np.testing.assert_allclose(totals, [0.5, 0.5], atol=0.07)


@pytest.mark.slow
def test_toy2_conditional_prediction_fans_out():
    fan = FanConfig()
    dataset = gen_toy2(2, fan)
    grid = uniform_grid(fan.n)
    cfg = FitConfig(
        k=2,
        controls=3,
        n=fan.n,
        m_obs=2,
        learning_rate=5e-3,
        max_iters=3000,
        batch_size=100,
        seed=2,
        log_every=1000,
    )
    encoder, _ = fit_conditional(dataset.sequences, grid, cfg, EncoderConfig(hidden_sizes=(32,)))

    low, high = np.deg2rad(fan.angle_range)
    for j in range(10):
        mixture = predict(encoder, dataset.sequences[j, :2], grid)
        top = mixture.components[top_component(mixture)]
        traces = [np.trace(curve_at(top, float(t)).cov) for t in grid.values]
        assert np.all(np.diff(traces) >= -1e-9), f"traces={traces}"

        end = curve_at(top, 1.0).mean
        angle = np.arctan2(end[0], end[1])
        margin = np.deg2rad(5.0)
        assert low - margin <= angle <= high + margin
        radius = (fan.n - 1) * fan.step
        assert 0.75 * radius <= np.linalg.norm(end) <= 1.25 * radius
