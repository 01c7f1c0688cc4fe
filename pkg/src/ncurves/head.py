"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Mixture head: maps an unconstrained parameter vector onto an N-Curve mixture
and scores sequences under it. Everything here is differentiable torch code
in float64; ``realize`` and ``encode_params`` are the numpy-facing ends.
"""

import math
from typing import Literal, NamedTuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from ncurves.errors import NotPositiveDefinite, ShapeMismatch
from ncurves.ncurve import IndexGrid, NCurve, NCurveMixture, bernstein_matrix
from ncurves.parameters import FitConfig

DTYPE = torch.float64
LOG_2PI = math.log(2.0 * math.pi)
MIN_LOG_WEIGHT = -690.0
"""Logit used for zero weights when encoding; exp(-690) underflows to ~1e-300."""
MAX_CORRELATION = 1.0 - 1e-6
"""Bound on |rho|; tanh saturates to exactly 1 for large raw values."""


class MixtureLayout(BaseModel):
    """
    Shape of the flat parameter vector ``theta``.

    Order: K mixture logits, then control means (K, N+1, d), log standard
    deviations (K, N+1, d) and raw correlation/Cholesky entries (K, N+1, c).
    """

    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=1)
    degree: int = Field(ge=0)
    d: int = Field(ge=1)
    covariance_mode: Literal["diagonal", "correlation", "cholesky"] = "diagonal"
    sigma_min: float = Field(default=1e-4, gt=0.0)

    @classmethod
    def from_config(cls, cfg: FitConfig) -> "MixtureLayout":
        return cls(
            k=cfg.k,
            degree=cfg.degree,
            d=cfg.d,
            covariance_mode=cfg.covariance_mode,
            sigma_min=cfg.sigma_min,
        )

    @property
    def n_controls(self) -> int:
        return self.degree + 1

    @property
    def n_corr(self) -> int:
        if self.covariance_mode == "diagonal":
            return 0
        return self.d * (self.d - 1) // 2

    @property
    def size(self) -> int:
        per_control = 2 * self.d + self.n_corr
        return self.k + self.k * self.n_controls * per_control


class HeadParams(NamedTuple):
    """Realized tensors for a batch of B parameter vectors."""

    log_weights: torch.Tensor
    means: torch.Tensor
    covs: torch.Tensor


def split_theta(
    theta: torch.Tensor, layout: MixtureLayout
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Cut a (B, P) parameter batch into logits, means, log-sigmas and raw correlations."""
    if theta.ndim != 2 or theta.shape[-1] != layout.size:
        raise ShapeMismatch(
            f"expected parameter vectors of length {layout.size}, got shape {tuple(theta.shape)}"
        )
    batch = theta.shape[0]
    k, c, d = layout.k, layout.n_controls, layout.d
    block = k * c * d
    logits = theta[:, :k]
    means = theta[:, k : k + block].reshape(batch, k, c, d)
    log_sigma = theta[:, k + block : k + 2 * block].reshape(batch, k, c, d)
    corr = theta[:, k + 2 * block :].reshape(batch, k, c, layout.n_corr)
    return logits, means, log_sigma, corr


def control_covariances(
    log_sigma: torch.Tensor, corr: torch.Tensor, layout: MixtureLayout
) -> torch.Tensor:
    """Covariances (..., d, d) of the control points; positive definite by construction."""
    sigma = torch.exp(log_sigma) + layout.sigma_min
    if layout.covariance_mode == "diagonal":
        return torch.diag_embed(sigma * sigma)

    if layout.covariance_mode == "correlation":
        s1, s2 = sigma[..., 0], sigma[..., 1]
        off = MAX_CORRELATION * torch.tanh(corr[..., 0]) * s1 * s2
        return torch.stack(
            [torch.stack([s1 * s1, off], dim=-1), torch.stack([off, s2 * s2], dim=-1)],
            dim=-2,
        )

    rows, cols = torch.tril_indices(layout.d, layout.d, offset=-1)
    lower = torch.zeros(*sigma.shape, layout.d, dtype=sigma.dtype)
    lower[..., rows, cols] = corr
    factor = torch.diag_embed(sigma) + lower
    return factor @ factor.transpose(-1, -2)


def head_params(theta: torch.Tensor, layout: MixtureLayout) -> HeadParams:
    logits, means, log_sigma, corr = split_theta(theta, layout)
    return HeadParams(
        log_weights=torch.log_softmax(logits, dim=-1),
        means=means,
        covs=control_covariances(log_sigma, corr, layout),
    )


def basis_tensors(degree: int, grid: IndexGrid) -> tuple[torch.Tensor, torch.Tensor]:
    """Bernstein matrix (n, N+1) and its elementwise square."""
    basis = torch.as_tensor(bernstein_matrix(degree, grid), dtype=DTYPE)
    return basis, basis * basis


def point_log_densities(
    params: HeadParams, basis: torch.Tensor, basis_sq: torch.Tensor, x: torch.Tensor
) -> torch.Tensor:
    """
    Log density of every sample under every component's curve point.

    :param x: sequences, shape (M, n, d); parameters broadcast from batch 1 or M
    :return: shape (M, K, n)
    """
    point_means = torch.einsum("tc,bkcd->bktd", basis, params.means)
    point_covs = torch.einsum("tc,bkcde->bktde", basis_sq, params.covs)
    chol, info = torch.linalg.cholesky_ex(point_covs)
    if bool(torch.any(info != 0)):
        raise NotPositiveDefinite("curve point covariance is not positive definite")
    diff = x.unsqueeze(1) - point_means
    z = torch.linalg.solve_triangular(chol, diff.unsqueeze(-1), upper=False).squeeze(-1)
    maha = torch.sum(z * z, dim=-1)
    log_det = 2.0 * torch.sum(torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)), dim=-1)
    return -0.5 * (x.shape[-1] * LOG_2PI + log_det + maha)


def sequence_log_likelihoods(
    params: HeadParams,
    basis: torch.Tensor,
    basis_sq: torch.Tensor,
    x: torch.Tensor,
    reduction: Literal["mean", "sum"] = "sum",
) -> torch.Tensor:
    """Per-sequence, per-component log-likelihood under independent steps, shape (M, K)."""
    log_p = point_log_densities(params, basis, basis_sq, x)
    if reduction == "mean":
        return log_p.mean(dim=-1)
    return log_p.sum(dim=-1)


def nll_loss(
    theta: torch.Tensor,
    layout: MixtureLayout,
    basis: torch.Tensor,
    basis_sq: torch.Tensor,
    x: torch.Tensor,
    reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    """Mean over sequences of ``-logsumexp_k(log pi_k + loglik_k)``."""
    params = head_params(theta, layout)
    seq_ll = sequence_log_likelihoods(params, basis, basis_sq, x, reduction)
    return -torch.logsumexp(params.log_weights + seq_ll, dim=-1).mean()


def realize_batch(theta: torch.Tensor, layout: MixtureLayout) -> list[NCurveMixture]:
    """Turn each row of a (B, P) parameter batch into an NCurveMixture."""
    with torch.no_grad():
        params = head_params(theta.to(DTYPE), layout)
    weights = torch.exp(params.log_weights).numpy()
    means = params.means.numpy()
    covs = params.covs.numpy()

    mixtures = []
    for b in range(theta.shape[0]):
        # softmax output sums to 1 up to round-off; renormalize for the simplex check
        w = weights[b] / weights[b].sum()
        mixtures.append(
            NCurveMixture(
                weights=w,
                components=tuple(
                    NCurve.from_arrays(means[b, k], covs[b, k]) for k in range(layout.k)
                ),
            )
        )
    return mixtures


def realize(theta: np.ndarray, layout: MixtureLayout) -> NCurveMixture:
    """Mixture described by one unconstrained parameter vector."""
    vector = np.asarray(theta, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != layout.size:
        raise ShapeMismatch(
            f"expected a parameter vector of length {layout.size}, got shape {vector.shape}"
        )
    return realize_batch(torch.as_tensor(vector[np.newaxis], dtype=DTYPE), layout)[0]


def encode_params(mixture: NCurveMixture, layout: MixtureLayout) -> np.ndarray:
    """
    Inverse of ``realize`` for mixtures the layout can represent.

    Diagonal layouts ignore off-diagonal covariance entries; standard deviations
    at or below ``sigma_min`` are clamped just above the floor.
    """
    if (mixture.k, mixture.degree, mixture.dim) != (layout.k, layout.degree, layout.d):
        raise ShapeMismatch(
            f"mixture (K={mixture.k}, N={mixture.degree}, d={mixture.dim}) does not match "
            f"layout (K={layout.k}, N={layout.degree}, d={layout.d})"
        )
    logits = np.maximum(np.log(np.clip(mixture.weights, 0.0, None)), MIN_LOG_WEIGHT)
    means = np.stack([component.control_means for component in mixture.components])
    covs = np.stack([component.control_covs for component in mixture.components])

    if layout.covariance_mode == "cholesky":
        factors = np.linalg.cholesky(covs)
        sigma = np.diagonal(factors, axis1=-2, axis2=-1)
        rows, cols = np.tril_indices(layout.d, k=-1)
        corr = factors[..., rows, cols]
    else:
        sigma = np.sqrt(np.diagonal(covs, axis1=-2, axis2=-1))
        if layout.covariance_mode == "correlation":
            rho = covs[..., 0, 1] / (sigma[..., 0] * sigma[..., 1] * MAX_CORRELATION)
            corr = np.arctanh(np.clip(rho, -1.0 + 1e-15, 1.0 - 1e-15))[..., np.newaxis]
        else:
            corr = np.zeros(sigma.shape[:-1] + (0,))

    log_sigma = np.log(np.maximum(sigma - layout.sigma_min, np.finfo(np.float64).tiny))
    return np.concatenate(
        [logits, means.reshape(-1), log_sigma.reshape(-1), corr.reshape(-1)]
    )


__all__ = [
    "MixtureLayout",
    "HeadParams",
    "split_theta",
    "control_covariances",
    "head_params",
    "basis_tensors",
    "point_log_densities",
    "sequence_log_likelihoods",
    "nll_loss",
    "realize",
    "realize_batch",
    "encode_params",
]
