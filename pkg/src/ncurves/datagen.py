"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Seeded toy datasets and reading/writing of sequence files.

Dataset files come in two formats:

* JSONL, one sequence per line:
  ``{"id": "...", "points": [[x0, x1, ...], ...], "control": [...], "label": ...}``
  where ``control`` and ``label`` are optional.
* CSV with header ``seq_id,step,x0,...,x{d-1}`` and an optional trailing
  ``control`` column; rows of a sequence are contiguous and steps run 0..n-1.
"""

import csv
import json
import logging
import math
from pathlib import Path
import sys
from typing import Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    JsonValue,
    ValidationError,
    field_serializer,
    field_validator,
    model_validator,
)

from ncurves.errors import DataError, EmptyFile, ParseError, RaggedSequence
from ncurves.ncurve import (
    IndexGrid,
    NCurve,
    NCurveMixture,
    bernstein_matrix,
    sample_mixture_realization,
    uniform_grid,
)
from ncurves.parameters import Parameters
from ncurves.tracing import choose_span
from ncurves.type_hints import as_generator

Format = Literal["jsonl", "csv"]


class Scaler(BaseModel):
    """
    Per-axis affine map ``(x - offset) / scale``.

    ``minmax`` sends the joint per-axis range of all points onto [-1, 1];
    ``standardize`` gives every axis zero mean and unit standard deviation.
    """

    model_config = ConfigDict(frozen=True)

    mode: Literal["minmax", "standardize"]
    offset: tuple[float, ...]
    scale: tuple[float, ...]

    @classmethod
    def fit(cls, sequences: np.ndarray, mode: Literal["minmax", "standardize"]) -> "Scaler":
        points = np.asarray(sequences, dtype=np.float64).reshape(-1, sequences.shape[-1])
        if mode == "minmax":
            low, high = points.min(axis=0), points.max(axis=0)
            offset, scale = 0.5 * (high + low), 0.5 * (high - low)
        else:
            offset, scale = points.mean(axis=0), points.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mode=mode, offset=tuple(offset.tolist()), scale=tuple(scale.tolist()))

    def transform(self, values: Any) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - np.asarray(self.offset)) / np.asarray(
            self.scale
        )

    def inverse_transform(self, values: Any) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * np.asarray(self.scale) + np.asarray(
            self.offset
        )


class DatasetMeta(BaseModel):
    """Provenance of a dataset: generator name, seed and generator settings."""

    model_config = ConfigDict(frozen=True)

    name: str = "dataset"
    seed: int | None = None
    structured: bool | None = None
    generator: dict[str, JsonValue] = Field(default_factory=dict)
    scaler: Scaler | None = None


class SequenceDataset(BaseModel):
    """
    M sequences of n d-dimensional points sharing one index grid.

    :param sequences: array of shape (M, n, d)
    :param control: optional per-sequence control channel, shape (M, n)
    :param labels: optional per-sequence generator label (curve index, fan angle)
    :param ids: sequence identifiers, defaulting to "0".."M-1"
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sequences: np.ndarray
    control: np.ndarray | None = None
    labels: np.ndarray | None = None
    ids: tuple[str, ...] = ()
    meta: DatasetMeta = Field(default_factory=DatasetMeta)

    @field_validator("sequences", mode="before")
    @classmethod
    def coerce_sequences(cls, value: Any) -> np.ndarray:
        sequences = np.array(value, dtype=np.float64)
        if sequences.ndim != 3:
            raise ValueError(f"sequences must have shape (M, n, d), got {sequences.shape}")
        sequences.setflags(write=False)
        return sequences

    @field_validator("control", "labels", mode="before")
    @classmethod
    def coerce_optional(cls, value: Any) -> np.ndarray | None:
        if value is None:
            return None
        array = np.array(value)
        if array.dtype.kind not in "iu":
            array = array.astype(np.float64)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def check_shapes(self) -> Self:
        m, n, _ = self.sequences.shape
        if self.control is not None and self.control.shape != (m, n):
            raise ValueError(f"control must have shape ({m}, {n}), got {self.control.shape}")
        if self.labels is not None and self.labels.shape != (m,):
            raise ValueError(f"labels must have shape ({m},), got {self.labels.shape}")
        if self.ids and len(self.ids) != m:
            raise ValueError(f"expected {m} sequence ids, got {len(self.ids)}")
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(j) for j in range(m)))
        return self

    @field_serializer("sequences", "control", "labels")
    def serialize_array(self, value: np.ndarray | None):
        return None if value is None else value.tolist()

    @property
    def m(self) -> int:
        return int(self.sequences.shape[0])

    @property
    def n(self) -> int:
        return int(self.sequences.shape[1])

    @property
    def d(self) -> int:
        return int(self.sequences.shape[2])

    def grid(self) -> IndexGrid:
        return uniform_grid(self.n)

    def scaled(self, mode: Literal["minmax", "standardize"]) -> "SequenceDataset":
        """Copy with points mapped by a scaler fitted on this dataset."""
        scaler = Scaler.fit(self.sequences, mode)
        return self.model_copy(
            update={
                "sequences": scaler.transform(self.sequences),
                "meta": self.meta.model_copy(update={"scaler": scaler}),
            }
        )

    def unscaled(self) -> "SequenceDataset":
        if self.meta.scaler is None:
            return self
        return self.model_copy(
            update={
                "sequences": self.meta.scaler.inverse_transform(self.sequences),
                "meta": self.meta.model_copy(update={"scaler": None}),
            }
        )


Point = tuple[float, float]


class Toy1Config(Parameters):
    """Single noisy path: an 11-step smooth mean with a per-step noise schedule."""

    m: int = Field(default=100, ge=1, description="Number of sequences.")
    path: tuple[Point, ...] = Field(
        default=((0.0, 0.0), (1.0, 3.0), (3.0, -1.0), (5.0, 1.0)),
        description="Bézier control polygon of the mean path.",
    )
    sigmas: tuple[float, ...] = Field(
        default=(0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.1, 0.2, 0.4, 0.3, 0.1),
        description="Isotropic noise standard deviation at each step; its length is n.",
    )
    noise_scale: float = Field(default=1.0, ge=0.0, description="Multiplier on sigmas.")

    @model_validator(mode="after")
    def check_schedule(self) -> Self:
        if len(self.sigmas) < 2 or any(s < 0.0 for s in self.sigmas):
            raise ValueError("sigmas needs at least two non-negative values")
        return self


class FanConfig(Parameters):
    """Rays leaving the origin upwards at uniformly drawn angles, plus i.i.d. noise."""

    m: int = Field(default=500, ge=1)
    n: int = Field(default=5, ge=2)
    step: float = Field(default=1.0, gt=0.0, description="Radius gained per step.")
    angle_range: tuple[float, float] = Field(
        default=(-45.0, 45.0),
        description="Angles in degrees from the vertical axis, clockwise positive.",
    )
    noise: float = Field(default=0.05, ge=0.0)

    @model_validator(mode="after")
    def check_range(self) -> Self:
        if self.angle_range[0] > self.angle_range[1]:
            raise ValueError("angle_range must be (low, high)")
        return self


class TwoCurveConfig(Parameters):
    """Two fixed mean curves with constant isotropic noise."""

    m: int = Field(default=1000, ge=1)
    n: int = Field(default=20, ge=2)
    curve_a: tuple[Point, ...] = ((0.0, 1.0), (1.0, 3.0), (2.0, 3.0), (3.0, 1.0))
    curve_b: tuple[Point, ...] = ((0.0, -1.0), (1.0, -3.0), (2.0, -3.0), (3.0, -1.0))
    noise: float = Field(default=0.2, ge=0.0)
    p_a: float = Field(default=0.5, ge=0.0, le=1.0, description="Probability of curve a.")
    structured: bool = Field(
        default=True,
        description="Whole sequences follow one curve; otherwise every step picks independently.",
    )


class Toy4Config(Parameters):
    """
    Ground-truth two-component mixture sharing the start (-5, 0) and ending at
    (6, 0) and (-15, 0) with weights 0.25 and 0.75.
    """

    m: int = Field(default=1000, ge=1)
    n: int = Field(default=25, ge=2)
    weights: tuple[float, float] = (0.25, 0.75)
    polygons: tuple[tuple[Point, ...], tuple[Point, ...]] = (
        ((-5.0, 0.0), (-2.0, 5.0), (3.0, 5.0), (6.0, 0.0)),
        ((-5.0, 0.0), (-8.0, -4.0), (-12.0, -4.0), (-15.0, 0.0)),
    )
    sigmas: tuple[float, ...] = Field(
        default=(0.1, 0.5, 0.5, 0.3),
        description="Isotropic standard deviation of each control point.",
    )


def _mean_path(polygon: Any, grid: IndexGrid) -> np.ndarray:
    control = np.asarray(polygon, dtype=np.float64)
    return bernstein_matrix(control.shape[0] - 1, grid) @ control


def _generated(
    name: str,
    seed: int,
    config: Parameters,
    sequences: np.ndarray,
    labels: np.ndarray | None = None,
    structured: bool | None = None,
) -> SequenceDataset:
    return SequenceDataset(
        sequences=sequences,
        labels=labels,
        meta=DatasetMeta(
            name=name,
            seed=seed,
            structured=structured,
            generator=config.model_dump(mode="json"),
        ),
    )


def gen_toy1(seed: int = 1, config: Toy1Config | None = None) -> SequenceDataset:
    """Noisy samples around one smooth path with step-dependent spread."""
    config = config or Toy1Config()
    generator = as_generator(seed)
    grid = uniform_grid(len(config.sigmas))
    mean = _mean_path(config.path, grid)
    sigmas = config.noise_scale * np.asarray(config.sigmas)
    noise = generator.standard_normal((config.m, len(grid), 2)) * sigmas[:, np.newaxis]
    return _generated("toy1", seed, config, mean + noise)


def gen_toy2(seed: int = 2, config: FanConfig | None = None) -> SequenceDataset:
    """Fan of straight rays from the origin; labels carry each ray's angle in radians."""
    config = config or FanConfig()
    generator = as_generator(seed)
    low, high = np.deg2rad(config.angle_range)
    angles = generator.uniform(low, high, size=config.m)
    radii = config.step * np.arange(config.n)
    directions = np.stack([np.sin(angles), np.cos(angles)], axis=-1)
    rays = radii[np.newaxis, :, np.newaxis] * directions[:, np.newaxis, :]
    noise = config.noise * generator.standard_normal(rays.shape)
    return _generated("toy2", seed, config, rays + noise, labels=angles)


def gen_toy3(
    seed: int = 3, structured: bool = True, config: TwoCurveConfig | None = None
) -> SequenceDataset:
    """
    Two-path data. Structured sequences stick to one curve (label 0 for curve a,
    1 for curve b); unstructured ones choose a curve at every step and carry no
    labels.
    """
    config = (config or TwoCurveConfig()).model_copy(update={"structured": structured})
    generator = as_generator(seed)
    grid = uniform_grid(config.n)
    curves = np.stack([_mean_path(config.curve_a, grid), _mean_path(config.curve_b, grid)])
    noise = config.noise * generator.standard_normal((config.m, config.n, 2))

    if structured:
        choice = (generator.random(config.m) >= config.p_a).astype(np.int64)
        sequences = curves[choice] + noise
        return _generated("toy3", seed, config, sequences, labels=choice, structured=True)

    per_step = (generator.random((config.m, config.n)) >= config.p_a).astype(np.int64)
    sequences = curves[per_step, np.arange(config.n)[np.newaxis, :]] + noise
    return _generated("toy3", seed, config, sequences, structured=False)


def toy4_ground_truth(config: Toy4Config | None = None) -> NCurveMixture:
    config = config or Toy4Config()
    covs = [s * s * np.eye(2) for s in config.sigmas]
    return NCurveMixture(
        weights=np.asarray(config.weights),
        components=tuple(
            NCurve.from_arrays(np.asarray(polygon), np.stack(covs))
            for polygon in config.polygons
        ),
    )


def gen_toy4(
    seed: int = 4, config: Toy4Config | None = None
) -> tuple[NCurveMixture, SequenceDataset]:
    """Ground-truth mixture and M realizations of it; labels are component indices."""
    config = config or Toy4Config()
    truth = toy4_ground_truth(config)
    generator = as_generator(seed)
    grid = uniform_grid(config.n)
    draws = [sample_mixture_realization(truth, grid, generator) for _ in range(config.m)]
    labels = np.asarray([k for k, _ in draws], dtype=np.int64)
    sequences = np.stack([sequence for _, sequence in draws])
    return truth, _generated("toy4", seed, config, sequences, labels=labels)


def gen_toy5(seed: int = 5, config: TwoCurveConfig | None = None) -> SequenceDataset:
    """Structured two-path data used to train an oversized mixture."""
    dataset = gen_toy3(seed, structured=True, config=config)
    return dataset.model_copy(update={"meta": dataset.meta.model_copy(update={"name": "toy5"})})


TOYS = ("toy1", "toy2", "toy3", "toy4", "toy5")


CONFIG_TYPES: dict[str, type[Parameters]] = {
    "toy1": Toy1Config,
    "toy2": FanConfig,
    "toy3": TwoCurveConfig,
    "toy4": Toy4Config,
    "toy5": TwoCurveConfig,
}


def toy_config(name: str, values: dict[str, Any] | None = None) -> Parameters:
    """Validated generator settings for a toy, defaults overridden by ``values``."""
    if name not in CONFIG_TYPES:
        raise DataError(f"unknown toy {name!r}; expected one of {', '.join(TOYS)}")
    try:
        return CONFIG_TYPES[name].model_validate(values or {})
    except ValidationError as e:
        raise DataError(
            f"invalid {name} generator config",
            messages=[f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()],
        ) from e


def generate(
    name: str,
    seed: int,
    structured: bool = True,
    config: dict[str, Any] | None = None,
) -> tuple[SequenceDataset, NCurveMixture | None]:
    """Dispatch by toy name; the mixture is toy4's ground truth and None otherwise."""
    settings = toy_config(name, config)
    span = choose_span("generate", {"toy": name, "seed": seed})
    with span:
        truth = None
        if isinstance(settings, Toy1Config):
            dataset = gen_toy1(seed, settings)
        elif isinstance(settings, FanConfig):
            dataset = gen_toy2(seed, settings)
        elif isinstance(settings, Toy4Config):
            truth, dataset = gen_toy4(seed, settings)
        elif isinstance(settings, TwoCurveConfig) and name == "toy5":
            dataset = gen_toy5(seed, settings)
        elif isinstance(settings, TwoCurveConfig):
            dataset = gen_toy3(
                seed, structured=structured and settings.structured, config=settings
            )
        else:
            raise DataError(f"no generator for {type(settings).__name__}")
        logging.info("generated %s: M=%d n=%d d=%d", name, dataset.m, dataset.n, dataset.d)
        return dataset, truth


def _infer_format(path: Path, fmt: Format | None) -> Format:
    if fmt is not None:
        return fmt
    if path.suffix.lower() == ".csv":
        return "csv"
    return "jsonl"


def _finite_floats(values: Any, line: int, what: str) -> list[float]:
    if not isinstance(values, list):
        raise ParseError(line, f"{what} must be a list")
    try:
        floats = [float(v) for v in values]
    except (TypeError, ValueError) as e:
        raise ParseError(line, f"{what} holds a non-numeric value") from e
    if not all(math.isfinite(v) for v in floats):
        raise ParseError(line, f"{what} holds a non-finite value")
    return floats


def _read_jsonl(path: Path) -> tuple[list, list, list, list]:
    ids, sequences, controls, labels = [], [], [], []
    shape: tuple[int, int] | None = None
    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(line_number, f"invalid JSON: {e.msg}") from e
            if not isinstance(record, dict) or "points" not in record:
                raise ParseError(line_number, "expected an object with a 'points' list")
            if not isinstance(record["points"], list) or not record["points"]:
                raise ParseError(line_number, "'points' must be a non-empty list")

            points = [_finite_floats(p, line_number, "point") for p in record["points"]]
            dims = {len(p) for p in points}
            if len(dims) != 1:
                raise RaggedSequence(line_number, "points have different dimensions")
            current = (len(points), dims.pop())
            if shape is None:
                shape = current
            elif current != shape:
                raise RaggedSequence(
                    line_number,
                    f"sequence has n={current[0]}, d={current[1]}; "
                    f"expected n={shape[0]}, d={shape[1]}",
                )

            control = record.get("control")
            if controls and (control is None) != (controls[0] is None):
                raise RaggedSequence(
                    line_number,
                    "control channel must be present on every line or on none",
                )
            if control is not None:
                control = _finite_floats(control, line_number, "control")
                if len(control) != shape[0]:
                    raise RaggedSequence(
                        line_number, f"control has {len(control)} values, expected {shape[0]}"
                    )

            ids.append(str(record.get("id", len(ids))))
            sequences.append(points)
            controls.append(control)
            labels.append(record.get("label"))
    return ids, sequences, controls, labels


def _read_csv(path: Path) -> tuple[list, list, list, list]:
    ids: list[str] = []
    sequences: list[list[list[float]]] = []
    controls: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return [], [], [], []
        header = [column.strip() for column in header]
        if header[:2] != ["seq_id", "step"] or len(header) < 3:
            raise ParseError(1, "header must start with seq_id,step followed by x0..x{d-1}")
        has_control = header[-1] == "control"
        d = len(header) - 2 - int(has_control)
        if d < 1 or header[2 : 2 + d] != [f"x{a}" for a in range(d)]:
            raise ParseError(1, "coordinate columns must be named x0..x{d-1}")

        n: int | None = None
        last_line = 1
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedSequence(
                    line_number, f"row has {len(row)} columns, expected {len(header)}"
                )
            seq_id = row[0]
            try:
                step = int(row[1])
            except ValueError as e:
                raise ParseError(line_number, f"step {row[1]!r} is not an integer") from e
            values = _finite_floats(row[2:], line_number, "row")

            if not ids or ids[-1] != seq_id:
                if ids and n is None:
                    n = len(sequences[-1])
                if ids and len(sequences[-1]) != n:
                    raise RaggedSequence(
                        last_line, f"sequence {ids[-1]!r} has {len(sequences[-1])} steps"
                    )
                if seq_id in ids:
                    raise ParseError(line_number, f"rows of sequence {seq_id!r} are not contiguous")
                ids.append(seq_id)
                sequences.append([])
                controls.append([])
            if step != len(sequences[-1]):
                raise ParseError(
                    line_number, f"expected step {len(sequences[-1])}, got {step}"
                )
            sequences[-1].append(values[:d])
            if has_control:
                controls[-1].append(values[d])
            last_line = line_number

        if ids and n is not None and len(sequences[-1]) != n:
            raise RaggedSequence(
                last_line, f"sequence {ids[-1]!r} has {len(sequences[-1])} steps"
            )
    if not has_control:
        controls = [None] * len(ids)
    return ids, sequences, controls, [None] * len(ids)


def load_sequences(
    path: Path | str,
    fmt: Format | None = None,
    scale: Literal["minmax", "standardize"] | None = None,
) -> SequenceDataset:
    """
    Read a JSONL or CSV sequence file, format inferred from the suffix by default.

    :param scale: optionally rescale; the fitted scaler is kept in ``meta.scaler``
    :raises ParseError: malformed line, with its line number
    :raises RaggedSequence: a sequence disagrees with the first one in n or d
    :raises EmptyFile: no sequences
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path} does not exist")
    fmt = _infer_format(path, fmt)
    ids, sequences, controls, labels = (_read_csv if fmt == "csv" else _read_jsonl)(path)
    if not sequences:
        raise EmptyFile(str(path))

    control = None if controls[0] is None else np.asarray(controls)
    label_array = None
    if all(
        isinstance(label, (int, float)) and not isinstance(label, bool) for label in labels
    ):
        label_array = np.asarray(labels)

    dataset = SequenceDataset(
        sequences=np.asarray(sequences),
        control=control,
        labels=label_array,
        ids=tuple(ids),
        meta=DatasetMeta(name=path.stem),
    )
    logging.info("loaded %d sequences from %s", dataset.m, path)
    if scale is not None:
        return dataset.scaled(scale)
    return dataset


def _label_value(value: Any) -> JsonValue:
    return value.item() if isinstance(value, np.generic) else value


def save_sequences(
    dataset: SequenceDataset, path: Path | str, fmt: Format | None = None
) -> Path:
    """Write ``dataset`` as JSONL or CSV with round-trip float precision."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if fmt == "jsonl":
            for j in range(dataset.m):
                record: dict[str, JsonValue] = {
                    "id": dataset.ids[j],
                    "points": dataset.sequences[j].tolist(),
                }
                if dataset.control is not None:
                    record["control"] = dataset.control[j].tolist()
                if dataset.labels is not None:
                    record["label"] = _label_value(dataset.labels[j])
                handle.write(json.dumps(record) + "\n")
        else:
            writer = csv.writer(handle, lineterminator="\n")
            header = ["seq_id", "step"] + [f"x{a}" for a in range(dataset.d)]
            if dataset.control is not None:
                header.append("control")
            writer.writerow(header)
            for j in range(dataset.m):
                for i in range(dataset.n):
                    row = [dataset.ids[j], str(i)]
                    row.extend(repr(float(v)) for v in dataset.sequences[j, i])
                    if dataset.control is not None:
                        row.append(repr(float(dataset.control[j, i])))
                    writer.writerow(row)
    return path


def save_meta(dataset: SequenceDataset, path: Path | str) -> Path:
    """Generator settings and provenance as JSON next to a dataset file."""
    path = Path(path)
    path.write_text(dataset.meta.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


__all__ = [
    "Scaler",
    "DatasetMeta",
    "SequenceDataset",
    "Toy1Config",
    "FanConfig",
    "TwoCurveConfig",
    "Toy4Config",
    "TOYS",
    "CONFIG_TYPES",
    "toy_config",
    "gen_toy1",
    "gen_toy2",
    "gen_toy3",
    "gen_toy4",
    "gen_toy5",
    "toy4_ground_truth",
    "generate",
    "load_sequences",
    "save_sequences",
    "save_meta",
]
