"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import logging
import sys
from typing import Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self
from collections.abc import Mapping, Iterator

from opentelemetry.util.types import AttributeValue
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Parameters(BaseModel):
    """
    Base class for validated, immutable configuration objects.
    Values are exported as OpenTelemetry span attributes by ``otel_attributes``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, extra="forbid")

    def otel_attributes(
        self, key_prefix: str = "parameters."
    ) -> Iterator[tuple[str, AttributeValue]]:
        """Return OpenTelemetry attributes to be sent with a span."""

        def sequence_attributes(element: Any) -> Any:
            if isinstance(element, (str, int, float, bool)):
                return element
            else:
                return str(object=element)

        def dict_attributes(
            _value: Mapping[str, Any], prefix: str
        ) -> Iterator[tuple[str, AttributeValue]]:
            for _k, _v in _value.items():
                if isinstance(_v, (str, int, float, bool)):
                    yield f"{prefix}{_k}", _v
                elif isinstance(_v, (list, tuple, set, frozenset)):
                    yield f"{prefix}{_k}", list(map(sequence_attributes, _v))
                elif isinstance(_v, dict):
                    yield from dict_attributes(_v, f"{prefix}{_k}.")
                else:
                    yield f"{prefix}{_k}", str(object=_v)

        for field_name, field_value in self.model_dump().items():
            key = f"{key_prefix}{field_name}"

            try:
                if field_value is None:
                    continue
                if isinstance(field_value, (str, int, float, bool)):
                    yield key, field_value
                elif isinstance(field_value, (list, tuple, set, frozenset)):
                    yield key, list(map(sequence_attributes, field_value))
                elif isinstance(field_value, dict):
                    yield from dict_attributes(field_value, key + ".")
                else:
                    yield key, str(object=field_value)
            except Exception as e:
                logging.warning(
                    f"Unsupported type for attribute [{key}: {type(field_value)}]: {e}"
                )


class FitConfig(Parameters):
    """
    Settings for maximum-likelihood fitting of an N-Curve mixture.

    ``controls`` counts control points, so the curve degree is ``controls - 1``.
    """

    model_config = ConfigDict(title="Fit Config", frozen=True, extra="forbid")

    k: int = Field(default=1, ge=1, description="Number of mixture components.")
    controls: int = Field(
        default=4, ge=2, description="Gaussian control points per component (N+1)."
    )
    d: int = Field(default=2, ge=1, description="Dimension of the sample vectors.")
    n: int = Field(default=25, ge=2, description="Length of the index grid.")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Adam step size.")
    max_iters: int = Field(default=5000, ge=1, description="Optimizer steps.")
    batch_size: int = Field(
        default=256, ge=1, description="Sequences per mini-batch, reshuffled per epoch."
    )
    seed: int = Field(default=0, ge=0, description="Seed for init and batching.")
    loss_reduction: Literal["mean", "sum"] = Field(
        default="mean",
        description="Average (mean) or add (sum) per-step log densities in the training loss.",
    )
    full_cov: bool | None = Field(
        default=None,
        description="Full control-point covariances; None enables them for d=2 only.",
    )
    sigma_min: float = Field(
        default=1e-4, gt=0.0, description="Floor added to every standard deviation."
    )
    init: Literal["farthest", "interpolate"] = Field(
        default="farthest",
        description="Control mean initialization: farthest-point seed sequences or "
        "start/end interpolation of the dataset mean.",
    )
    jitter: float = Field(
        default=0.05,
        ge=0.0,
        description="Init noise on control means, as a fraction of the data range.",
    )
    log_every: int = Field(
        default=500, ge=1, description="Iterations between progress log lines."
    )
    m_obs: int = Field(
        default=0,
        ge=0,
        description="Observed prefix length for conditional fits; 0 fits unconditionally.",
    )
    use_control: bool = Field(
        default=False,
        description="Append the per-sequence control channel to encoder inputs.",
    )

    @model_validator(mode="after")
    def check_horizon(self) -> Self:
        if self.m_obs >= self.n:
            raise ValueError(
                f"m_obs={self.m_obs} leaves nothing to predict on a grid of n={self.n}"
            )
        return self

    @property
    def degree(self) -> int:
        return self.controls - 1

    @property
    def conditional(self) -> bool:
        return self.m_obs > 0

    @property
    def covariance_mode(self) -> Literal["diagonal", "correlation", "cholesky"]:
        """How the unconstrained covariance parameters are realized."""
        full = self.full_cov if self.full_cov is not None else self.d == 2
        if not full or self.d == 1:
            return "diagonal"
        if self.d == 2:
            return "correlation"
        return "cholesky"


class EncoderConfig(Parameters):
    """Feed-forward observation encoder producing the mixture parameter vector."""

    model_config = ConfigDict(title="Encoder Config", frozen=True, extra="forbid")

    hidden_sizes: tuple[int, ...] = Field(
        default=(64,), description="Widths of the hidden layers."
    )
    activation: Literal["tanh", "relu", "elu"] = Field(
        default="tanh", description="Nonlinearity between layers."
    )
    input_size: int = Field(
        default=0, ge=0, description="Flattened observation length (m·d plus control)."
    )
    output_size: int = Field(
        default=0, ge=0, description="Length of the mixture parameter vector."
    )

    @model_validator(mode="after")
    def check_sizes(self) -> Self:
        if any(size < 1 for size in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be positive")
        return self


__all__ = ["Parameters", "FitConfig", "EncoderConfig"]
