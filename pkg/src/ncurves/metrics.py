"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Prediction metrics (FDE, NLL, RMSE), coverage, component matching and the
Monte-Carlo moment estimate used to check pointwise curve moments.
"""

import csv
import math
from collections.abc import Sequence as SequenceABC
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, JsonValue
from scipy.optimize import linear_sum_assignment

from ncurves.errors import DataError, EmptyInput, OutOfRange
from ncurves.gaussian import mahalanobis
from ncurves.ncurve import (
    IndexGrid,
    NCurve,
    NCurveMixture,
    check_sequences,
    curve_at,
    mean_curve,
    sample_realizations,
    top_component,
)
from ncurves.tracing import choose_span
from ncurves.train import MixtureEncoder, mixture_nll_per_sequence, predict_many
from ncurves.type_hints import Seed

NLL_CONVENTION = (
    "negative log-likelihood summed over timesteps with steps treated as independent, "
    "averaged over sequences; data units as given, no normalization"
)


class MomentEstimate(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray


class SequenceScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    fde: float
    nll: float
    rmse: float


class EvalReport(BaseModel):
    """
    Aggregate and per-sequence scores.

    ``fde`` and ``rmse`` are root-mean-square reductions of the per-sequence
    values, ``nll`` their mean.
    """

    model_config = ConfigDict(frozen=True)

    fde: float
    nll: float
    rmse: float
    coverage: float | None = None
    per_sequence: list[SequenceScore] = Field(default_factory=list)
    config: dict[str, JsonValue] = Field(default_factory=dict)
    metadata: dict[str, JsonValue] = Field(default_factory=dict)

    @classmethod
    def from_scores(
        cls,
        scores: SequenceABC[SequenceScore],
        coverage: float | None = None,
        config: dict[str, JsonValue] | None = None,
        metadata: dict[str, JsonValue] | None = None,
    ) -> "EvalReport":
        fde_value, nll_value, rmse_value = aggregate(scores)
        return cls(
            fde=fde_value,
            nll=nll_value,
            rmse=rmse_value,
            coverage=coverage,
            per_sequence=list(scores),
            config=config or {},
            metadata=metadata or {},
        )

    def summary_line(self) -> str:
        return f"FDE={self.fde!r} NLL={self.nll!r} RMSE={self.rmse!r}"

    def write_json(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    def write_csv_row(self, path: Path | str) -> Path:
        """One-row summary CSV: ``fde,nll,rmse,coverage``."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["fde", "nll", "rmse", "coverage"])
            coverage = "" if self.coverage is None else repr(self.coverage)
            writer.writerow([repr(self.fde), repr(self.nll), repr(self.rmse), coverage])
        return path


def aggregate(scores: SequenceABC[SequenceScore]) -> tuple[float, float, float]:
    if len(scores) == 0:
        raise EmptyInput("no per-sequence scores to aggregate")
    fde_values = np.asarray([s.fde for s in scores])
    nll_values = np.asarray([s.nll for s in scores])
    rmse_values = np.asarray([s.rmse for s in scores])
    return (
        float(np.sqrt(np.mean(fde_values**2))),
        float(np.mean(nll_values)),
        float(np.sqrt(np.mean(rmse_values**2))),
    )


def _gt_batch(gt_sequences: Any, grid: IndexGrid, dim: int) -> np.ndarray:
    batch = np.asarray(gt_sequences, dtype=np.float64)
    if batch.size == 0:
        raise EmptyInput("no ground-truth sequences")
    return check_sequences(batch, grid, dim)


def _top_mean_curve(pred: NCurveMixture | NCurve, grid: IndexGrid) -> np.ndarray:
    if isinstance(pred, NCurveMixture):
        pred = pred.components[top_component(pred)]
    return mean_curve(pred, grid)


def endpoint_errors(pred: NCurveMixture, grid: IndexGrid, gt_sequences: Any) -> np.ndarray:
    """Distance of every ground-truth endpoint from the top component's mean endpoint."""
    batch = _gt_batch(gt_sequences, grid, pred.dim)
    endpoint = curve_at(pred.components[top_component(pred)], float(grid.values[-1])).mean
    return np.linalg.norm(batch[:, -1, :] - endpoint, axis=1)


def fde(pred: NCurveMixture, grid: IndexGrid, gt_sequences: Any) -> float:
    """Root mean square endpoint error of the highest-weight component's mean curve."""
    errors = endpoint_errors(pred, grid, gt_sequences)
    return float(np.sqrt(np.mean(errors**2)))


def nll_metric(pred: NCurveMixture, grid: IndexGrid, gt_sequences: Any) -> float:
    """Mixture NLL of the ground truth, summed over timesteps and averaged over sequences."""
    batch = _gt_batch(gt_sequences, grid, pred.dim)
    return float(mixture_nll_per_sequence(pred, grid, batch, reduction="sum").mean())


def rmse(
    pred: NCurveMixture | NCurve, grid: IndexGrid, gt_sequences: Any, start: int = 0
) -> float:
    """
    Root mean squared error of the top component's mean curve over every step,
    dimension and sequence.

    :param start: first grid index scored; conditional predictions skip the observed prefix
    """
    batch = _gt_batch(gt_sequences, grid, pred.dim)
    if not 0 <= start < len(grid):
        raise OutOfRange(f"start={start} outside [0, {len(grid) - 1}]")
    errors = batch[:, start:, :] - _top_mean_curve(pred, grid)[start:]
    return float(np.sqrt(np.mean(errors**2)))


def mc_moments(c: NCurve, t: float, n_samples: int, rng: Seed) -> MomentEstimate:
    """
    Empirical mean and covariance of realizations at ``t``, with standard errors.

    Covariance standard errors use the Gaussian fourth-moment formula
    ``sqrt((S_aa S_bb + S_ab^2) / n)``.
    """
    if n_samples < 2:
        raise OutOfRange(f"n_samples={n_samples} must be at least 2")
    points = sample_realizations(c, IndexGrid(values=[t]), rng, n_samples)[:, 0, :]
    mean = points.mean(axis=0)
    cov = np.atleast_2d(np.cov(points, rowvar=False))
    variances = np.diag(cov)
    mean_se = np.sqrt(variances / n_samples)
    cov_se = np.sqrt((np.outer(variances, variances) + cov**2) / n_samples)
    return MomentEstimate(mean=mean, cov=cov, mean_se=mean_se, cov_se=cov_se)


def coverage(c: NCurve, grid: IndexGrid, sequences: Any, n_sigma: float) -> float:
    """Fraction of (sequence, step) pairs within Mahalanobis distance ``n_sigma``."""
    batch = check_sequences(sequences, grid, c.dim)
    inside = np.stack(
        [
            np.asarray(mahalanobis(curve_at(c, float(t)), batch[:, i, :])) <= n_sigma
            for i, t in enumerate(grid.values)
        ],
        axis=1,
    )
    return float(np.mean(inside))


def responsible_components(m: NCurveMixture, grid: IndexGrid, sequences: Any) -> np.ndarray:
    """Index of the component with the highest posterior weight for every sequence."""
    batch = check_sequences(sequences, grid, m.dim)
    scores = np.stack(
        [
            math.log(w) - mixture_nll_per_sequence(
                NCurveMixture(weights=np.ones(1), components=(component,)), grid, batch
            )
            if w > 0.0
            else np.full(batch.shape[0], -np.inf)
            for w, component in zip(m.weights, m.components)
        ],
        axis=1,
    )
    return np.argmax(scores, axis=1)


def _polygons(m: NCurveMixture) -> np.ndarray:
    return np.stack([component.control_means for component in m.components])


def _polygon_distances(estimated: NCurveMixture, reference: NCurveMixture) -> np.ndarray:
    if (estimated.degree, estimated.dim) != (reference.degree, reference.dim):
        raise DataError("component matching needs equal degree and dimension")
    est, ref = _polygons(estimated), _polygons(reference)
    diff = ref[:, np.newaxis] - est[np.newaxis]
    return np.linalg.norm(diff, axis=-1).sum(axis=-1)


def match_components(estimated: NCurveMixture, reference: NCurveMixture) -> np.ndarray:
    """
    One-to-one assignment minimizing the summed L2 distance of mean control polygons.

    :return: for every reference component, the index of its estimated partner
    """
    if estimated.k < reference.k:
        raise DataError(
            f"cannot match {reference.k} reference components with {estimated.k} estimates"
        )
    rows, cols = linear_sum_assignment(_polygon_distances(estimated, reference))
    assignment = np.empty(reference.k, dtype=np.int64)
    assignment[rows] = cols
    return assignment


def assign_components(estimated: NCurveMixture, reference: NCurveMixture) -> np.ndarray:
    """Nearest reference component (by mean polygon) for every estimated component."""
    return np.argmin(_polygon_distances(estimated, reference), axis=0)


def control_point_rmse(
    estimated: NCurveMixture, reference: NCurveMixture, assignment: np.ndarray | None = None
) -> float:
    """RMSE between matched mean control polygons."""
    if assignment is None:
        assignment = match_components(estimated, reference)
    diff = _polygons(estimated)[assignment] - _polygons(reference)
    return float(np.sqrt(np.mean(diff**2)))


def _score_batch(
    mixture: NCurveMixture, grid: IndexGrid, batch: np.ndarray, start: int
) -> list[SequenceScore]:
    endpoint_error = endpoint_errors(mixture, grid, batch)
    nll_values = mixture_nll_per_sequence(mixture, grid, batch, reduction="sum")
    errors = batch[:, start:, :] - _top_mean_curve(mixture, grid)[start:]
    rmse_values = np.sqrt(np.mean(errors**2, axis=(1, 2)))
    return [
        SequenceScore(fde=float(f), nll=float(v), rmse=float(r))
        for f, v, r in zip(endpoint_error, nll_values, rmse_values)
    ]


def evaluate(
    model: NCurveMixture | MixtureEncoder,
    grid: IndexGrid,
    sequences: Any,
    n_sigma: float = 3.0,
    controls: Any | None = None,
    config: dict[str, JsonValue] | None = None,
) -> EvalReport:
    """
    Score ``model`` against ground-truth sequences.

    An encoder predicts one mixture per sequence from its observed prefix; RMSE
    then covers only the predicted steps. Coverage uses each sequence's most
    responsible component.
    """
    dim = model.dim if isinstance(model, NCurveMixture) else model.layout.d
    batch = _gt_batch(sequences, grid, dim)

    span = choose_span("evaluate", {"sequences": int(batch.shape[0]), "n": len(grid)})
    with span:
        if isinstance(model, NCurveMixture):
            scores = _score_batch(model, grid, batch, start=0)
            owners = responsible_components(model, grid, batch)
            inside = [
                coverage(model.components[k], grid, batch[owners == k], n_sigma)
                * int(np.sum(owners == k))
                for k in range(model.k)
                if np.any(owners == k)
            ]
            covered = float(np.sum(inside) / batch.shape[0])
            m_obs = 0
        else:
            mixtures = predict_many(model, batch, grid, controls)
            scores, covered_sum = [], 0.0
            for j, mixture in enumerate(mixtures):
                scores.extend(_score_batch(mixture, grid, batch[j : j + 1], model.m_obs))
                owner = int(responsible_components(mixture, grid, batch[j : j + 1])[0])
                covered_sum += coverage(mixture.components[owner], grid, batch[j], n_sigma)
            covered = covered_sum / batch.shape[0]
            m_obs = model.m_obs

        metadata: dict[str, JsonValue] = {
            "nll_convention": NLL_CONVENTION,
            "fde_reduction": "root mean square over sequences",
            "rmse_reduction": "root mean square over sequences of per-sequence RMSE",
            "coverage_n_sigma": n_sigma,
            "m_obs": m_obs,
        }
        report = EvalReport.from_scores(
            scores, coverage=covered, config=config, metadata=metadata
        )
        span.set_attribute("fde", report.fde)
        span.set_attribute("nll", report.nll)
        span.set_attribute("rmse", report.rmse)
        return report


__all__ = [
    "NLL_CONVENTION",
    "MomentEstimate",
    "SequenceScore",
    "EvalReport",
    "aggregate",
    "endpoint_errors",
    "fde",
    "nll_metric",
    "rmse",
    "mc_moments",
    "coverage",
    "responsible_components",
    "match_components",
    "assign_components",
    "control_point_rmse",
    "evaluate",
]
