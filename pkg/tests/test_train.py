"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import logging
import math
import unittest

import numpy as np
import pytest
import torch

from ncurves import (
    DataError,
    EmptyDataset,
    FitConfig,
    MixtureLayout,
    NCurve,
    NCurveMixture,
    NonFiniteLoss,
    ShapeMismatch,
    TrainState,
    curve_log_density,
    encode_params,
    fit_conditional,
    fit_unconditional,
    gen_toy4,
    gradient,
    mixture_nll,
    predict,
    realize,
    sequence_loglik,
    uniform_grid,
)
from ncurves.datagen import FanConfig, gen_toy2
from ncurves.head import DTYPE, basis_tensors
from ncurves.ncurve import mean_curve, sample_realizations
from ncurves.parameters import EncoderConfig
from ncurves.train import (
    _locate_non_finite,
    build_encoder,
    encoder_inputs,
    initial_theta,
    mixture_nll_per_sequence,
    predict_many,
    write_loss_trace,
)

from .libs.mixtures import isotropic_curve

CUBIC = isotropic_curve(
    [[0.0, 0.0], [1.0, 3.0], [3.0, -1.0], [5.0, 1.0]], [0.1, 0.3, 0.3, 0.2]
)


def cubic_data(m: int = 64, n: int = 8, seed: int = 0) -> np.ndarray:
    return sample_realizations(CUBIC, uniform_grid(n), seed, m)


class LikelihoodTest(unittest.TestCase):
    def test_single_component_nll_is_mean_negative_loglik(self):
        grid = uniform_grid(8)
        data = cubic_data(m=5)
        mixture = NCurveMixture(weights=[1.0], components=(CUBIC,))
        expected = -np.mean([sequence_loglik(CUBIC, grid, s) for s in data])
        self.assertAlmostEqual(mixture_nll(mixture, grid, data), expected, delta=1e-9)

    def test_mean_reduction_divides_by_length(self):
        grid = uniform_grid(8)
        sequence = cubic_data(m=1)[0]
        self.assertAlmostEqual(
            sequence_loglik(CUBIC, grid, sequence, "mean"),
            sequence_loglik(CUBIC, grid, sequence) / 8,
            delta=1e-12,
        )

    def test_per_sequence_values(self):
        grid = uniform_grid(8)
        data = cubic_data(m=3)
        mixture = NCurveMixture(weights=[1.0], components=(CUBIC,))
        per_sequence = mixture_nll_per_sequence(mixture, grid, data)
        self.assertEqual(per_sequence.shape, (3,))
        self.assertAlmostEqual(per_sequence[2], -sequence_loglik(CUBIC, grid, data[2]), delta=1e-9)

    def test_sequence_loglik_sums_pointwise_terms(self):
        grid = uniform_grid(8)
        sequence = cubic_data(m=1, seed=4)[0]
        pointwise = [
            curve_log_density(CUBIC, float(t), x) for t, x in zip(grid.values, sequence)
        ]
        self.assertAlmostEqual(
            sequence_loglik(CUBIC, grid, sequence), math.fsum(pointwise), delta=1e-10
        )

    def test_sequence_loglik_peaks_at_true_means(self):
        grid = uniform_grid(8)
        sequence = mean_curve(CUBIC, grid)
        best = sequence_loglik(CUBIC, grid, sequence)
        generator = np.random.Generator(np.random.PCG64(8))
        for _ in range(20):
            moved = NCurve.from_arrays(
                CUBIC.control_means + 1e-3 * generator.standard_normal((4, 2)),
                CUBIC.control_covs,
            )
            self.assertLess(sequence_loglik(moved, grid, sequence), best)

    def test_toy4_truth_beats_perturbed_mixtures(self):
        truth, dataset = gen_toy4(4)
        grid = dataset.grid()
        reference = mixture_nll(truth, grid, dataset.sequences)
        generator = np.random.Generator(np.random.PCG64(50))
        for _ in range(50):
            components = tuple(
                NCurve.from_arrays(
                    c.control_means + 0.3 * generator.standard_normal(c.control_means.shape),
                    c.control_covs * np.exp(0.3 * generator.standard_normal()),
                )
                for c in truth.components
            )
            w = float(np.clip(0.25 + 0.1 * generator.standard_normal(), 0.05, 0.95))
            perturbed = NCurveMixture(weights=[w, 1.0 - w], components=components)
            self.assertLess(reference, mixture_nll(perturbed, grid, dataset.sequences))

    def test_sigma_floor_keeps_loss_and_gradient_finite(self):
        layout = MixtureLayout(k=2, degree=3, d=2, covariance_mode="correlation")
        mixture = NCurveMixture(weights=[0.5, 0.5], components=(CUBIC, CUBIC))
        theta = encode_params(mixture, layout)
        # log sigma of -40 realizes sigma at the 1e-4 floor
        theta[2 + 2 * 4 * 2 : 2 + 2 * 4 * 2 + 2 * 4 * 2] = -40.0
        far = cubic_data(m=3) + 50.0
        grid = uniform_grid(8)
        floored = realize(theta, layout)
        sigma = float(np.sqrt(floored.components[0].control_covs[0, 0, 0]))
        self.assertAlmostEqual(sigma, 1e-4, delta=1e-12)
        self.assertTrue(math.isfinite(mixture_nll(floored, grid, far)))
        self.assertTrue(np.all(np.isfinite(gradient(theta, layout, grid, far))))

    def test_empty_dataset(self):
        mixture = NCurveMixture(weights=[1.0], components=(CUBIC,))
        with pytest.raises(EmptyDataset):
            mixture_nll(mixture, uniform_grid(8), np.zeros((0, 8, 2)))


class AnalyticOptimumTest(unittest.TestCase):
    """Degree one, two grid points: each control point is observed directly."""

    def setUp(self):
        generator = np.random.Generator(np.random.PCG64(21))
        self.grid = uniform_grid(2)
        self.data = generator.normal(loc=[1.0, -2.0], scale=[0.5, 2.0], size=(200, 2))[
            :, :, np.newaxis
        ]
        self.layout = MixtureLayout(k=1, degree=1, d=1)

    def mle(self, shift: float = 0.0) -> NCurveMixture:
        means = self.data.mean(axis=0) + shift
        variances = self.data.var(axis=0)
        return NCurveMixture(
            weights=[1.0],
            components=(NCurve.from_arrays(means, variances[:, :, np.newaxis]),),
        )

    def test_gradient_vanishes_at_sample_moments(self):
        theta = encode_params(self.mle(), self.layout)
        for reduction in ("mean", "sum"):
            grad = gradient(theta, self.layout, self.grid, self.data, reduction)
            np.testing.assert_allclose(grad, 0.0, atol=1e-9)

    def test_gradient_points_back_to_sample_means(self):
        theta = encode_params(self.mle(shift=0.5), self.layout)
        grad = gradient(theta, self.layout, self.grid, self.data, "sum")
        means = grad[1:3]
        self.assertTrue(np.all(means > 0.0))


class InitialThetaTest(unittest.TestCase):
    def test_shape_and_zero_logits(self):
        cfg = FitConfig(k=3, controls=4, d=2, n=8, seed=4)
        theta = initial_theta(cubic_data(), uniform_grid(8), cfg)
        layout = MixtureLayout.from_config(cfg)
        self.assertEqual(theta.shape, (layout.size,))
        np.testing.assert_array_equal(theta[:3], 0.0)
        np.testing.assert_array_equal(theta[-3 * 4 :], 0.0)
        np.testing.assert_array_equal(theta, initial_theta(cubic_data(), uniform_grid(8), cfg))

    def test_interpolated_polygons(self):
        cfg = FitConfig(k=2, controls=3, d=2, n=8, init="interpolate", jitter=0.0)
        data = cubic_data()
        theta = initial_theta(data, uniform_grid(8), cfg)
        start, end = data[:, 0, :].mean(axis=0), data[:, -1, :].mean(axis=0)
        expected = np.stack([start, 0.5 * (start + end), end])
        means = theta[2 : 2 + 2 * 3 * 2].reshape(2, 3, 2)
        np.testing.assert_allclose(means[0], expected, atol=1e-12)
        np.testing.assert_allclose(means[1], expected, atol=1e-12)

    def test_farthest_polygons_fit_member_sequences(self):
        cfg = FitConfig(k=2, controls=4, d=2, n=8, jitter=0.0)
        data = cubic_data()
        theta = initial_theta(data, uniform_grid(8), cfg)
        self.assertTrue(np.all(np.isfinite(theta)))
        means = theta[2 : 2 + 2 * 4 * 2].reshape(2, 4, 2)
        self.assertFalse(np.allclose(means[0], means[1]))

    def test_constant_data_gets_positive_spread(self):
        cfg = FitConfig(k=1, controls=2, d=2, n=4, jitter=0.0)
        theta = initial_theta(np.ones((6, 4, 2)), uniform_grid(4), cfg)
        self.assertTrue(np.all(np.isfinite(theta)))


class TrainStateTest(unittest.TestCase):
    def test_fresh_state(self):
        layout = MixtureLayout(k=1, degree=1, d=2, covariance_mode="correlation")
        theta = np.linspace(-1.0, 1.0, layout.size)
        state = TrainState(theta, layout, 1e-2)
        np.testing.assert_array_equal(state.theta, theta)
        self.assertEqual(state.step, 0)
        np.testing.assert_array_equal(state.opt_m, 0.0)
        np.testing.assert_array_equal(state.opt_v, 0.0)
        np.testing.assert_array_equal(state.grad, 0.0)
        self.assertEqual(state.mixture().k, 1)


class FitUnconditionalTest(unittest.TestCase):
    cfg = FitConfig(
        k=1, controls=4, d=2, n=8, learning_rate=0.05, max_iters=60, batch_size=64, seed=3
    )

    def test_loss_decreases(self):
        result = fit_unconditional(cubic_data(), uniform_grid(8), self.cfg)
        self.assertEqual(len(result.loss_trace), 60)
        self.assertTrue(all(math.isfinite(v) for v in result.loss_trace))
        self.assertLess(result.loss_trace[-1], result.loss_trace[0])
        self.assertEqual((result.mixture.k, result.mixture.degree), (1, 3))

    def test_same_seed_same_fit(self):
        cfg = self.cfg.model_copy(update={"batch_size": 16, "max_iters": 20})
        first = fit_unconditional(cubic_data(), uniform_grid(8), cfg)
        second = fit_unconditional(cubic_data(), uniform_grid(8), cfg)
        self.assertEqual(first.loss_trace, second.loss_trace)
        self.assertEqual(first.mixture, second.mixture)

    def test_progress_is_logged(self):
        cfg = self.cfg.model_copy(update={"max_iters": 4, "log_every": 2})
        with self.assertLogs(level=logging.INFO) as logs:
            fit_unconditional(cubic_data(), uniform_grid(8), cfg)
        progress = [line for line in logs.output if "nll" in line]
        self.assertEqual(len(progress), 2)

    def test_grid_must_match_config(self):
        with pytest.raises(DataError):
            fit_unconditional(cubic_data(n=6), uniform_grid(6), self.cfg)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            fit_unconditional(np.zeros((0, 8, 2)), uniform_grid(8), self.cfg)

    def test_non_finite_data_fails_at_first_iteration(self):
        data = cubic_data()
        data[5, 2, 0] = np.nan
        cfg = self.cfg.model_copy(update={"init": "interpolate"})
        with pytest.raises(NonFiniteLoss) as err:
            fit_unconditional(data, uniform_grid(8), cfg)
        self.assertEqual(err.value.iteration, 1)
        self.assertEqual(err.value.exit_code, 3)

    def test_locate_non_finite_point(self):
        layout = MixtureLayout(k=2, degree=3, d=2, covariance_mode="correlation")
        mixture = NCurveMixture(weights=[0.5, 0.5], components=(CUBIC, CUBIC))
        theta = torch.as_tensor(encode_params(mixture, layout)[np.newaxis], dtype=DTYPE)
        data = cubic_data(m=4)
        data[3, 5, 1] = np.nan
        basis, basis_sq = basis_tensors(3, uniform_grid(8))
        component, t_index = _locate_non_finite(
            theta, layout, basis, basis_sq, torch.as_tensor(data, dtype=DTYPE)
        )
        self.assertEqual((component, t_index), (0, 5))


class EncoderTest(unittest.TestCase):
    def setUp(self):
        self.dataset = gen_toy2(seed=7, config=FanConfig(m=48))
        self.grid = self.dataset.grid()
        self.cfg = FitConfig(
            k=1,
            controls=3,
            d=2,
            n=5,
            m_obs=2,
            learning_rate=1e-2,
            max_iters=15,
            batch_size=16,
            seed=5,
        )
        self.enc = EncoderConfig(hidden_sizes=(16,))

    def test_encoder_inputs(self):
        rows = encoder_inputs(self.dataset.sequences, 2, 2)
        self.assertEqual(rows.shape, (48, 4))
        np.testing.assert_array_equal(rows[0], self.dataset.sequences[0, :2].reshape(-1))
        with_control = encoder_inputs(self.dataset.sequences, 2, 2, np.ones((48, 5)))
        self.assertEqual(with_control.shape, (48, 9))
        with pytest.raises(ShapeMismatch):
            encoder_inputs(self.dataset.sequences[:, :1], 2, 2)

    def test_untrained_encoder_outputs_initial_theta(self):
        inputs = encoder_inputs(self.dataset.sequences, 2, 2)
        layout = MixtureLayout.from_config(self.cfg)
        theta0 = np.linspace(-1.0, 1.0, layout.size)
        enc = self.enc.model_copy(update={"input_size": 4, "output_size": layout.size})
        encoder = build_encoder(enc, self.cfg, inputs, theta0)
        with torch.no_grad():
            outputs = encoder(torch.as_tensor(inputs, dtype=DTYPE)).numpy()
        np.testing.assert_allclose(outputs, np.broadcast_to(theta0, outputs.shape), atol=0.1)

        twin = build_encoder(enc, self.cfg, inputs, theta0)
        for name, tensor in encoder.state_dict().items():
            self.assertTrue(torch.equal(tensor, twin.state_dict()[name]), name)

    def test_fit_and_predict(self):
        encoder, losses = fit_conditional(self.dataset.sequences, self.grid, self.cfg, self.enc)
        self.assertEqual(len(losses), 15)
        self.assertTrue(all(math.isfinite(v) for v in losses))

        mixture = predict(encoder, self.dataset.sequences[0, :2], self.grid)
        self.assertEqual((mixture.k, mixture.degree, mixture.dim), (1, 2, 2))
        many = predict_many(encoder, self.dataset.sequences[:4], self.grid)
        self.assertEqual(len(many), 4)
        np.testing.assert_allclose(
            many[0].components[0].control_means, mixture.components[0].control_means
        )

    def test_same_seed_same_encoder(self):
        first, first_losses = fit_conditional(self.dataset.sequences, self.grid, self.cfg, self.enc)
        second, second_losses = fit_conditional(self.dataset.sequences, self.grid, self.cfg, self.enc)
        self.assertEqual(first_losses, second_losses)
        for name, tensor in first.state_dict().items():
            self.assertTrue(torch.equal(tensor, second.state_dict()[name]), name)

    def test_predict_checks_shapes(self):
        encoder, _ = fit_conditional(
            self.dataset.sequences, self.grid, self.cfg.model_copy(update={"max_iters": 1}), self.enc
        )
        with pytest.raises(ShapeMismatch):
            predict(encoder, self.dataset.sequences[0, :1], self.grid)
        with pytest.raises(ShapeMismatch):
            predict(encoder, self.dataset.sequences[0, :2], uniform_grid(7))

    def test_rejects_unconditional_config(self):
        with pytest.raises(DataError):
            fit_conditional(self.dataset.sequences, self.grid, self.cfg.model_copy(update={"m_obs": 0}))

    def test_control_channel_required(self):
        cfg = self.cfg.model_copy(update={"use_control": True})
        with pytest.raises(DataError):
            fit_conditional(self.dataset.sequences, self.grid, cfg)

    def test_control_channel_widens_inputs(self):
        cfg = self.cfg.model_copy(update={"use_control": True, "max_iters": 2})
        controls = np.tile(np.linspace(0.0, 1.0, 5), (48, 1))
        encoder, _ = fit_conditional(self.dataset.sequences, self.grid, cfg, self.enc, controls)
        self.assertEqual(encoder.config.input_size, 2 * 2 + 5)
        mixture = predict(encoder, self.dataset.sequences[0, :2], self.grid, controls[0])
        self.assertEqual(mixture.k, 1)
        with pytest.raises(ShapeMismatch):
            predict(encoder, self.dataset.sequences[0, :2], self.grid)


def test_write_loss_trace(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_trace(path, [3.5, 2.25, 0.1])
    assert path.read_text(encoding="utf-8") == "iter,nll\n1,3.5\n2,2.25\n3,0.1\n"
