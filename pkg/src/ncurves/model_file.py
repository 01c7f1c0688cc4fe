"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import json
from pathlib import Path
import sys
from typing import Any

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ncurves.datagen import Scaler
from ncurves.errors import ModelFileError, NotPositiveDefinite
from ncurves.gaussian import cholesky_factor
from ncurves.head import DTYPE, MixtureLayout, realize_batch
from ncurves.ncurve import NCurve, NCurveMixture, WEIGHT_TOLERANCE
from ncurves.parameters import EncoderConfig, FitConfig
from ncurves.train import MixtureEncoder

MODEL_FILE_VERSION = 1


class ComponentRecord(BaseModel):
    """Control means (N+1 rows of d) and full row-major covariances of one component."""

    model_config = ConfigDict(frozen=True)

    means: list[list[float]]
    covs: list[list[list[float]]]


class EncoderRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: EncoderConfig
    m_obs: int
    use_control: bool = False
    state: dict[str, list[Any]] = Field(
        description="Encoder tensors as nested lists, keyed by state-dict name."
    )


class ModelFile(BaseModel):
    """
    JSON document describing a fitted model.

    For a conditional model the mixture fields hold the encoder's prediction for
    the mean training observation; the encoder itself is in ``encoder``.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    version: int = MODEL_FILE_VERSION
    d: int = Field(ge=1)
    degree: int = Field(alias="N", ge=0)
    k: int = Field(alias="K", ge=1)
    n: int = Field(ge=2, description="Grid length the model was fitted on.")
    weights: list[float]
    components: list[ComponentRecord]
    encoder: EncoderRecord | None = None
    config: FitConfig | None = None
    seed: int | None = None
    scaler: Scaler | None = None

    @model_validator(mode="after")
    def check_model(self) -> Self:
        if self.version != MODEL_FILE_VERSION:
            raise ValueError(
                f"unsupported model file version {self.version}, expected {MODEL_FILE_VERSION}"
            )
        if len(self.weights) != self.k or len(self.components) != self.k:
            raise ValueError(f"expected {self.k} weights and components")
        weights = np.asarray(self.weights)
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError("weights must be non-negative and sum to 1")
        for k, component in enumerate(self.components):
            means, covs = np.asarray(component.means), np.asarray(component.covs)
            expected = (self.degree + 1, self.d)
            if means.shape != expected or covs.shape != expected + (self.d,):
                raise ValueError(f"component {k} does not have {expected[0]} controls in d={self.d}")
            for cov in covs:
                try:
                    cholesky_factor(cov)
                except NotPositiveDefinite as e:
                    raise ValueError(f"component {k} has a covariance that is not positive definite") from e
        return self

    @classmethod
    def from_mixture(
        cls,
        mixture: NCurveMixture,
        n: int,
        config: FitConfig | None = None,
        encoder: MixtureEncoder | None = None,
        scaler: Scaler | None = None,
    ) -> "ModelFile":
        record = None
        if encoder is not None:
            record = EncoderRecord(
                config=encoder.config,
                m_obs=encoder.m_obs,
                use_control=encoder.use_control,
                state={
                    name: tensor.detach().numpy().tolist()
                    for name, tensor in encoder.state_dict().items()
                },
            )
        return cls(
            d=mixture.dim,
            degree=mixture.degree,
            k=mixture.k,
            n=n,
            weights=mixture.weights.tolist(),
            components=[
                ComponentRecord(
                    means=component.control_means.tolist(),
                    covs=component.control_covs.tolist(),
                )
                for component in mixture.components
            ],
            encoder=record,
            config=config,
            seed=None if config is None else config.seed,
            scaler=scaler,
        )

    @classmethod
    def from_encoder(
        cls,
        encoder: MixtureEncoder,
        config: FitConfig,
        scaler: Scaler | None = None,
    ) -> "ModelFile":
        with torch.no_grad():
            theta = encoder.net(torch.zeros(1, encoder.config.input_size, dtype=DTYPE))
        typical = realize_batch(theta, encoder.layout)[0]
        return cls.from_mixture(typical, config.n, config, encoder, scaler)

    @property
    def conditional(self) -> bool:
        return self.encoder is not None

    def mixture(self) -> NCurveMixture:
        return NCurveMixture(
            weights=np.asarray(self.weights),
            components=tuple(
                NCurve.from_arrays(np.asarray(c.means), np.asarray(c.covs))
                for c in self.components
            ),
        )

    def layout(self) -> MixtureLayout:
        if self.config is not None:
            return MixtureLayout.from_config(self.config)
        return MixtureLayout(k=self.k, degree=self.degree, d=self.d)

    def encoder_module(self) -> MixtureEncoder | None:
        if self.encoder is None:
            return None
        encoder = MixtureEncoder(
            self.encoder.config,
            self.layout(),
            self.encoder.m_obs,
            self.n,
            self.encoder.use_control,
        )
        encoder.load_state_dict(
            {
                name: torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
                for name, values in self.encoder.state.items()
            }
        )
        encoder.eval()
        return encoder

    def to_json(self) -> str:
        """Canonical text: sorted keys, two-space indent, shortest round-trip floats."""
        document = self.model_dump(mode="json", by_alias=True)
        return json.dumps(document, sort_keys=True, indent=2) + "\n"


def save_model(model: ModelFile, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(model.to_json(), encoding="utf-8")
    return path


def load_model(path: Path | str) -> ModelFile:
    """
    Read and validate a model file.

    :raises ModelFileError: unreadable JSON, wrong version, or invalid mixture
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ModelFileError(f"cannot read model file {path}: {e.strerror}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"model file {path} is not valid JSON: {e.msg}") from e
    try:
        return ModelFile.model_validate(document)
    except ValidationError as e:
        raise ModelFileError(
            f"invalid model file {path}",
            messages=[f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()],
        ) from e


__all__ = [
    "MODEL_FILE_VERSION",
    "ComponentRecord",
    "EncoderRecord",
    "ModelFile",
    "save_model",
    "load_model",
]
