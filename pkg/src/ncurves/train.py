"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Maximum-likelihood fitting of N-Curve mixtures.

Unconditional fits optimize a single parameter vector; conditional fits train
a feed-forward encoder that maps an observed prefix (and optionally a control
channel) onto the parameter vector of a mixture over the whole grid.
"""

import csv
import logging
import math
from collections.abc import Iterator
from pathlib import Path
from typing import Any, Literal, NamedTuple

import numpy as np
import torch
from scipy.special import logsumexp

from ncurves.errors import (
    DataError,
    EmptyDataset,
    NonFiniteLoss,
    NotPositiveDefinite,
    ShapeMismatch,
)
from ncurves.gaussian import log_density
from ncurves.head import (
    DTYPE,
    MixtureLayout,
    basis_tensors,
    head_params,
    nll_loss,
    point_log_densities,
    realize,
    realize_batch,
)
from ncurves.ncurve import (
    IndexGrid,
    NCurve,
    NCurveMixture,
    check_sequences,
    curve_at,
    fit_control_points,
)
from ncurves.parameters import EncoderConfig, FitConfig
from ncurves.tracing import choose_span
from ncurves.type_hints import Seed, as_generator

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MIN_INIT_STD = 1e-3
FINAL_LAYER_SCALE = 0.01

ACTIVATIONS: dict[str, type[torch.nn.Module]] = {
    "tanh": torch.nn.Tanh,
    "relu": torch.nn.ReLU,
    "elu": torch.nn.ELU,
}


class FitResult(NamedTuple):
    mixture: NCurveMixture
    loss_trace: list[float]


class TrainState:
    """
    Parameter vector and Adam state of an unconditional fit.

    The optimizer moments live in the ``torch.optim.Adam`` state; the
    properties below expose them as numpy arrays.
    """

    def __init__(self, theta: np.ndarray, layout: MixtureLayout, learning_rate: float):
        self.layout = layout
        self.parameter = torch.nn.Parameter(
            torch.tensor(np.asarray(theta, dtype=np.float64)[np.newaxis], dtype=DTYPE)
        )
        self.optimizer = torch.optim.Adam(
            [self.parameter], lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
        )

    def _moment(self, name: str) -> np.ndarray:
        state = self.optimizer.state.get(self.parameter, {})
        if name not in state:
            return np.zeros(self.layout.size)
        return state[name].detach().numpy()[0].copy()

    @property
    def theta(self) -> np.ndarray:
        return self.parameter.detach().numpy()[0].copy()

    @property
    def grad(self) -> np.ndarray:
        if self.parameter.grad is None:
            return np.zeros(self.layout.size)
        return self.parameter.grad.detach().numpy()[0].copy()

    @property
    def opt_m(self) -> np.ndarray:
        return self._moment("exp_avg")

    @property
    def opt_v(self) -> np.ndarray:
        return self._moment("exp_avg_sq")

    @property
    def step(self) -> int:
        state = self.optimizer.state.get(self.parameter, {})
        return int(state["step"]) if "step" in state else 0

    def mixture(self) -> NCurveMixture:
        return realize(self.theta, self.layout)


def sequence_loglik(
    c: NCurve,
    grid: IndexGrid,
    seq: Any,
    reduction: Literal["mean", "sum"] = "sum",
) -> float:
    """
    Log-likelihood of one sequence with the grid steps treated as independent.

    :param reduction: ``"mean"`` divides the summed log densities by n
    """
    points = check_sequences(seq, grid, c.dim)[0]
    total = math.fsum(
        float(log_density(curve_at(c, float(t)), x)) for t, x in zip(grid.values, points)
    )
    if reduction == "mean":
        return total / len(grid)
    return total


def _sequence_logliks(
    c: NCurve, grid: IndexGrid, batch: np.ndarray, reduction: Literal["mean", "sum"]
) -> np.ndarray:
    per_step = np.stack(
        [
            np.asarray(log_density(curve_at(c, float(t)), batch[:, i, :]))
            for i, t in enumerate(grid.values)
        ],
        axis=1,
    )
    total = per_step.sum(axis=1)
    if reduction == "mean":
        return total / len(grid)
    return total


def mixture_nll(
    m: NCurveMixture,
    grid: IndexGrid,
    sequences: Any,
    reduction: Literal["mean", "sum"] = "sum",
) -> float:
    """``(1/M) sum_j -logsumexp_k(log pi_k + loglik_k(S_j))``; zero weights contribute nothing."""
    per_sequence = mixture_nll_per_sequence(m, grid, sequences, reduction)
    return float(per_sequence.mean())


def mixture_nll_per_sequence(
    m: NCurveMixture,
    grid: IndexGrid,
    sequences: Any,
    reduction: Literal["mean", "sum"] = "sum",
) -> np.ndarray:
    batch = np.asarray(sequences, dtype=np.float64)
    if batch.size == 0 or (batch.ndim == 3 and batch.shape[0] == 0):
        raise EmptyDataset()
    batch = check_sequences(batch, grid, m.dim)

    terms = [
        math.log(weight) + _sequence_logliks(component, grid, batch, reduction)
        for weight, component in zip(m.weights, m.components)
        if weight > 0.0
    ]
    return -logsumexp(np.stack(terms, axis=1), axis=1)


def gradient(
    theta: np.ndarray,
    layout: MixtureLayout,
    grid: IndexGrid,
    batch: Any,
    reduction: Literal["mean", "sum"] = "mean",
) -> np.ndarray:
    """Exact gradient of the mixture NLL on ``batch`` with respect to ``theta``."""
    sequences = np.asarray(batch, dtype=np.float64)
    if sequences.size == 0:
        raise EmptyDataset("gradient needs a non-empty batch")
    sequences = check_sequences(sequences, grid, layout.d)
    vector = np.asarray(theta, dtype=np.float64)
    if vector.shape != (layout.size,):
        raise ShapeMismatch(
            f"expected a parameter vector of length {layout.size}, got shape {vector.shape}"
        )

    parameter = torch.tensor(vector[np.newaxis], dtype=DTYPE, requires_grad=True)
    basis, basis_sq = basis_tensors(layout.degree, grid)
    loss = nll_loss(
        parameter, layout, basis, basis_sq, torch.as_tensor(sequences, dtype=DTYPE), reduction
    )
    loss.backward()
    return parameter.grad.numpy()[0].copy()


def _farthest_seeds(batch: np.ndarray, k: int, generator: np.random.Generator) -> list[int]:
    """Farthest-point selection of ``k`` sequence indices, starting from a random one."""
    flat = batch.reshape(batch.shape[0], -1)
    seeds = [int(generator.integers(batch.shape[0]))]
    distances = np.linalg.norm(flat - flat[seeds[0]], axis=1)
    while len(seeds) < k:
        candidate = int(np.argmax(distances))
        seeds.append(candidate)
        distances = np.minimum(distances, np.linalg.norm(flat - flat[candidate], axis=1))
    return seeds


def initial_theta(
    sequences: Any, grid: IndexGrid, cfg: FitConfig, rng: Seed | None = None
) -> np.ndarray:
    """
    Starting parameter vector for a fit.

    Logits are zero. ``init="interpolate"`` lays every control polygon on the line
    between the dataset-mean start and end points; ``init="farthest"`` fits one
    polygon by least squares through each of K farthest-apart sequences. Both
    add Gaussian jitter of ``cfg.jitter`` times the per-axis data range. Standard
    deviations start at the per-axis data std.
    """
    layout = MixtureLayout.from_config(cfg)
    batch = check_sequences(sequences, grid, cfg.d)
    if batch.shape[0] == 0:
        raise EmptyDataset()
    generator = as_generator(cfg.seed if rng is None else rng)

    points = batch.reshape(-1, cfg.d)
    data_range = points.max(axis=0) - points.min(axis=0)
    data_std = np.maximum(points.std(axis=0), MIN_INIT_STD)

    if cfg.init == "farthest":
        seeds = _farthest_seeds(batch, cfg.k, generator)
        polygons = np.stack(
            [fit_control_points(batch[seed], grid, cfg.degree) for seed in seeds]
        )
    else:
        start, end = batch[:, 0, :].mean(axis=0), batch[:, -1, :].mean(axis=0)
        fractions = np.linspace(0.0, 1.0, cfg.controls)[:, np.newaxis]
        polygon = start + fractions * (end - start)
        polygons = np.repeat(polygon[np.newaxis], cfg.k, axis=0)

    means = polygons + cfg.jitter * data_range * generator.standard_normal(polygons.shape)
    log_sigma = np.broadcast_to(
        np.log(np.maximum(data_std - cfg.sigma_min, MIN_INIT_STD)), means.shape
    )
    corr = np.zeros((cfg.k, cfg.controls, layout.n_corr))
    return np.concatenate(
        [np.zeros(cfg.k), means.reshape(-1), log_sigma.reshape(-1), corr.reshape(-1)]
    )


def _minibatches(
    m: int, batch_size: int, generator: np.random.Generator
) -> Iterator[np.ndarray]:
    """Endless stream of index batches, reshuffled at every epoch."""
    while True:
        order = generator.permutation(m)
        for start in range(0, m, batch_size):
            yield order[start : start + batch_size]


def _locate_non_finite(
    theta: torch.Tensor,
    layout: MixtureLayout,
    basis: torch.Tensor,
    basis_sq: torch.Tensor,
    x: torch.Tensor,
) -> tuple[int | None, int | None]:
    """First (component, grid index) whose log density is not finite."""
    with torch.no_grad():
        try:
            log_p = point_log_densities(head_params(theta, layout), basis, basis_sq, x)
        except NotPositiveDefinite:
            return None, None
    bad = torch.nonzero(~torch.isfinite(log_p))
    if bad.shape[0] == 0:
        return None, None
    order = torch.argsort(bad[:, 1] * log_p.shape[-1] + bad[:, 2])
    first = bad[order[0]]
    return int(first[1]), int(first[2])


def _train_step(
    optimizer: torch.optim.Optimizer,
    theta_fn,
    layout: MixtureLayout,
    basis: torch.Tensor,
    basis_sq: torch.Tensor,
    x: torch.Tensor,
    cfg: FitConfig,
    iteration: int,
) -> float:
    optimizer.zero_grad()
    theta = theta_fn()
    try:
        loss = nll_loss(theta, layout, basis, basis_sq, x, cfg.loss_reduction)
    except NotPositiveDefinite as e:
        raise NonFiniteLoss(iteration=iteration) from e
    value = float(loss.detach())
    if not math.isfinite(value):
        component, t_index = _locate_non_finite(theta.detach(), layout, basis, basis_sq, x)
        raise NonFiniteLoss(iteration=iteration, component=component, t_index=t_index)
    loss.backward()
    optimizer.step()
    return value


def _report_progress(span, iteration: int, value: float, cfg: FitConfig) -> None:
    if iteration % cfg.log_every == 0 or iteration == cfg.max_iters:
        logging.info("iteration %d nll %.6f", iteration, value)
        span.add_event("progress", {"iteration": iteration, "nll": value})


def fit_unconditional(sequences: Any, grid: IndexGrid, cfg: FitConfig) -> FitResult:
    """
    Fit one mixture to every sequence with Adam on seeded, per-epoch reshuffled
    mini-batches.

    :return: the realized mixture and the per-iteration training loss
    :raises NonFiniteLoss: when the loss stops being finite
    """
    if len(grid) != cfg.n:
        raise DataError(f"grid has {len(grid)} points but the config expects n={cfg.n}")
    batch = check_sequences(sequences, grid, cfg.d)
    if batch.shape[0] == 0:
        raise EmptyDataset()

    layout = MixtureLayout.from_config(cfg)
    generator = as_generator(cfg.seed)
    state = TrainState(initial_theta(batch, grid, cfg, generator), layout, cfg.learning_rate)
    basis, basis_sq = basis_tensors(layout.degree, grid)
    data = torch.as_tensor(batch, dtype=DTYPE)
    batches = _minibatches(batch.shape[0], cfg.batch_size, generator)

    span = choose_span("fit_unconditional", dict(cfg.otel_attributes()))
    with span:
        logging.info(
            "fitting K=%d N=%d on %d sequences of length %d",
            cfg.k,
            cfg.degree,
            batch.shape[0],
            cfg.n,
        )
        losses: list[float] = []
        try:
            for iteration in range(1, cfg.max_iters + 1):
                x = data[torch.as_tensor(next(batches))]
                value = _train_step(
                    state.optimizer,
                    lambda: state.parameter,
                    layout,
                    basis,
                    basis_sq,
                    x,
                    cfg,
                    iteration,
                )
                losses.append(value)
                _report_progress(span, iteration, value, cfg)
        except NonFiniteLoss as e:
            span.record_exception(e)
            logging.error("%s (%s)", e.detail, ", ".join(e.messages))
            raise

    return FitResult(mixture=state.mixture(), loss_trace=losses)


class MixtureEncoder(torch.nn.Module):
    """
    Feed-forward map from an observed prefix to the mixture parameter vector.

    Inputs are standardized with per-feature shift/scale buffers fitted on the
    training observations.
    """

    def __init__(
        self,
        enc: EncoderConfig,
        layout: MixtureLayout,
        m_obs: int,
        n: int,
        use_control: bool = False,
    ):
        super().__init__()
        self.config = enc
        self.layout = layout
        self.m_obs = m_obs
        self.n = n
        self.use_control = use_control
        sizes = (enc.input_size, *enc.hidden_sizes)
        layers: list[torch.nn.Module] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            layers.append(torch.nn.Linear(fan_in, fan_out, dtype=DTYPE))
            layers.append(ACTIVATIONS[enc.activation]())
        layers.append(torch.nn.Linear(sizes[-1], enc.output_size, dtype=DTYPE))
        self.net = torch.nn.Sequential(*layers)
        self.register_buffer("input_shift", torch.zeros(enc.input_size, dtype=DTYPE))
        self.register_buffer("input_scale", torch.ones(enc.input_size, dtype=DTYPE))

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        return self.net((inputs - self.input_shift) / self.input_scale)


def encoder_inputs(
    observations: Any, m_obs: int, d: int, controls: Any | None = None
) -> np.ndarray:
    """
    Flatten observed prefixes, shape (M, m_obs, d) or longer, into encoder rows.

    Longer sequences are cut to their first ``m_obs`` steps; a control channel,
    shape (M, n), is appended when given.
    """
    batch = np.asarray(observations, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[np.newaxis]
    if batch.ndim != 3 or batch.shape[2] != d:
        raise ShapeMismatch(f"observations must have shape (M, m, {d}), got {batch.shape}")
    if batch.shape[1] < m_obs:
        raise ShapeMismatch(
            f"expected {m_obs} observed steps, got {batch.shape[1]}"
        )
    rows = batch[:, :m_obs, :].reshape(batch.shape[0], -1)
    if controls is not None:
        control = np.asarray(controls, dtype=np.float64)
        if control.ndim == 1:
            control = control[np.newaxis]
        rows = np.concatenate([rows, control], axis=1)
    return rows


def build_encoder(
    enc: EncoderConfig,
    cfg: FitConfig,
    inputs: np.ndarray,
    theta0: np.ndarray,
) -> MixtureEncoder:
    """Encoder whose untrained output is close to ``theta0`` for every input."""
    layout = MixtureLayout.from_config(cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        encoder = MixtureEncoder(enc, layout, cfg.m_obs, cfg.n, cfg.use_control)
    with torch.no_grad():
        final = encoder.net[-1]
        final.weight.mul_(FINAL_LAYER_SCALE)
        final.bias.copy_(torch.as_tensor(theta0, dtype=DTYPE))
        encoder.input_shift.copy_(torch.as_tensor(inputs.mean(axis=0), dtype=DTYPE))
        scale = inputs.std(axis=0)
        encoder.input_scale.copy_(
            torch.as_tensor(np.where(scale > 0.0, scale, 1.0), dtype=DTYPE)
        )
    return encoder


def fit_conditional(
    sequences: Any,
    grid: IndexGrid,
    cfg: FitConfig,
    enc: EncoderConfig | None = None,
    controls: Any | None = None,
) -> tuple[MixtureEncoder, list[float]]:
    """
    Train an encoder end-to-end on (observed prefix, full sequence) pairs.

    The first ``cfg.m_obs`` steps of each sequence are the observation; the loss
    is the mixture NLL of the whole sequence under the encoder's output.
    """
    if not cfg.conditional:
        raise DataError("conditional fitting needs m_obs > 0")
    if len(grid) != cfg.n:
        raise DataError(f"grid has {len(grid)} points but the config expects n={cfg.n}")
    batch = check_sequences(sequences, grid, cfg.d)
    if batch.shape[0] == 0:
        raise EmptyDataset()
    if cfg.use_control and controls is None:
        raise DataError("use_control is set but the dataset has no control channel")

    layout = MixtureLayout.from_config(cfg)
    inputs = encoder_inputs(batch, cfg.m_obs, cfg.d, controls if cfg.use_control else None)
    enc = (enc or EncoderConfig()).model_copy(
        update={"input_size": inputs.shape[1], "output_size": layout.size}
    )
    generator = as_generator(cfg.seed)
    encoder = build_encoder(enc, cfg, inputs, initial_theta(batch, grid, cfg, generator))
    optimizer = torch.optim.Adam(
        encoder.parameters(), lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    basis, basis_sq = basis_tensors(layout.degree, grid)
    data = torch.as_tensor(batch, dtype=DTYPE)
    features = torch.as_tensor(inputs, dtype=DTYPE)
    batches = _minibatches(batch.shape[0], cfg.batch_size, generator)

    attributes = dict(cfg.otel_attributes())
    attributes.update(enc.otel_attributes(key_prefix="encoder."))
    span = choose_span("fit_conditional", attributes)
    with span:
        logging.info(
            "fitting conditional K=%d N=%d from %d observed steps on %d sequences",
            cfg.k,
            cfg.degree,
            cfg.m_obs,
            batch.shape[0],
        )
        losses: list[float] = []
        try:
            for iteration in range(1, cfg.max_iters + 1):
                index = torch.as_tensor(next(batches))
                value = _train_step(
                    optimizer,
                    lambda: encoder(features[index]),
                    layout,
                    basis,
                    basis_sq,
                    data[index],
                    cfg,
                    iteration,
                )
                losses.append(value)
                _report_progress(span, iteration, value, cfg)
        except NonFiniteLoss as e:
            span.record_exception(e)
            logging.error("%s (%s)", e.detail, ", ".join(e.messages))
            raise

    encoder.eval()
    return encoder, losses


def predict(
    encoder: MixtureEncoder,
    observation: Any,
    grid: IndexGrid,
    control: Any | None = None,
) -> NCurveMixture:
    """Mixture over the whole grid for one observed prefix, in a single forward pass."""
    if len(grid) != encoder.n:
        raise ShapeMismatch(
            f"encoder predicts over n={encoder.n} steps, grid has {len(grid)}"
        )
    if encoder.use_control and control is None:
        raise ShapeMismatch("encoder expects a control channel")
    rows = encoder_inputs(
        observation, encoder.m_obs, encoder.layout.d, control if encoder.use_control else None
    )
    if rows.shape != (1, encoder.config.input_size):
        raise ShapeMismatch(
            f"expected one observation of {encoder.config.input_size} values, got {rows.shape}"
        )
    with torch.no_grad():
        theta = encoder(torch.as_tensor(rows, dtype=DTYPE))
    return realize_batch(theta, encoder.layout)[0]


def predict_many(
    encoder: MixtureEncoder,
    observations: Any,
    grid: IndexGrid,
    controls: Any | None = None,
) -> list[NCurveMixture]:
    if len(grid) != encoder.n:
        raise ShapeMismatch(
            f"encoder predicts over n={encoder.n} steps, grid has {len(grid)}"
        )
    rows = encoder_inputs(
        observations,
        encoder.m_obs,
        encoder.layout.d,
        controls if encoder.use_control else None,
    )
    if rows.shape[1] != encoder.config.input_size:
        raise ShapeMismatch(
            f"expected {encoder.config.input_size} encoder inputs, got {rows.shape[1]}"
        )
    with torch.no_grad():
        theta = encoder(torch.as_tensor(rows, dtype=DTYPE))
    return realize_batch(theta, encoder.layout)


def write_loss_trace(path: Path | str, losses: list[float]) -> None:
    """CSV with header ``iter,nll``; iterations count from 1."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iter", "nll"])
        for iteration, value in enumerate(losses, start=1):
            writer.writerow([iteration, repr(float(value))])


__all__ = [
    "FitResult",
    "TrainState",
    "MixtureEncoder",
    "sequence_loglik",
    "mixture_nll",
    "mixture_nll_per_sequence",
    "gradient",
    "initial_theta",
    "fit_unconditional",
    "fit_conditional",
    "build_encoder",
    "encoder_inputs",
    "predict",
    "predict_many",
    "write_loss_trace",
]
