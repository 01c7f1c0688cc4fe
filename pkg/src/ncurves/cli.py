"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Command line: ``ncurves {gen,fit,predict,eval,plotdata} ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from collections.abc import Sequence as SequenceABC
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
from pydantic import ValidationError

from ncurves.datagen import (
    TOYS,
    SequenceDataset,
    generate,
    load_sequences,
    save_meta,
    save_sequences,
)
from ncurves.errors import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    DataError,
    NCurveError,
    ParseError,
    ShapeMismatch,
    UsageError,
)
from ncurves.metrics import evaluate
from ncurves.model_file import ModelFile, load_model, save_model
from ncurves.ncurve import (
    NCurve,
    NCurveMixture,
    curve_at,
    envelope,
    sample_mixture_realization,
    top_component,
    uniform_grid,
)
from ncurves.parameters import EncoderConfig, FitConfig
from ncurves.tracing import configure_tracing, tracer
from ncurves.train import (
    fit_conditional,
    fit_unconditional,
    predict_many,
    write_loss_trace,
)
from ncurves.type_hints import as_generator


def package_version() -> str:
    try:
        return version("ncurves")
    except PackageNotFoundError:
        return "0.0.0"


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad arguments as ``UsageError`` instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message, messages=[self.format_usage().strip()])


def _add_common_options(parser: argparse.ArgumentParser, suppress: bool = False) -> None:
    """
    Attach the options every verb shares.

    The top-level parser owns the defaults. Verbs suppress theirs so an option given
    before the verb survives the verb's own parse.
    """

    def default(value: Any) -> Any:
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(0), help="seed for every random draw")
    parser.add_argument(
        "-o", "--out", type=Path, default=default(None), help="output file or directory"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", default=default(False), help="log warnings only"
    )
    verbosity.add_argument(
        "-v", "--verbose", action="store_true", default=default(False), help="log debug output"
    )
    parser.add_argument(
        "--trace",
        action="store_true",
        default=default(False),
        help="print OpenTelemetry spans to stderr",
    )


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_common_options(common, suppress=True)
    return common


def build_parser() -> ArgumentParser:
    common = _common_options()
    parser = ArgumentParser(
        prog="ncurves",
        description="Mixtures of Bézier curves with Gaussian control points.",
    )
    parser.add_argument("--version", action="version", version=package_version())
    _add_common_options(parser)
    verbs = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = verbs.add_parser("gen", parents=[common], help="generate a toy dataset")
    gen.add_argument("toy", choices=TOYS)
    gen.add_argument("--config", type=Path, help="JSON file overriding generator settings")
    gen.add_argument(
        "--unstructured",
        action="store_true",
        help="toy3: every step picks a curve independently",
    )
    gen.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")

    fit = verbs.add_parser("fit", parents=[common], help="fit a model to a dataset")
    fit.add_argument("data", type=Path)
    fit.add_argument("--k", type=int, default=1, help="mixture components")
    fit.add_argument("--controls", type=int, default=4, help="control points per component")
    fit.add_argument("--iters", type=int, default=5000)
    fit.add_argument("--lr", type=float, default=1e-3)
    fit.add_argument("--batch-size", type=int, default=256)
    fit.add_argument("--reduction", choices=("mean", "sum"), default="mean")
    fit.add_argument("--init", choices=("farthest", "interpolate"), default="farthest")
    fit.add_argument(
        "--full-cov",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="full control covariances (default: on for d=2 only)",
    )
    fit.add_argument(
        "--conditional",
        type=int,
        default=0,
        metavar="M_OBS",
        help="train an encoder conditioned on the first M_OBS steps",
    )
    fit.add_argument("--use-control", action="store_true")
    fit.add_argument("--hidden", type=int, nargs="+", default=[64], help="encoder widths")
    fit.add_argument("--scale", choices=("minmax", "standardize"))
    fit.add_argument("--loss-trace", type=Path, help="CSV path (default: <out>.loss.csv)")
    fit.add_argument("--log-every", type=int, default=500)

    predict = verbs.add_parser("predict", parents=[common], help="predict mixtures")
    predict.add_argument("model", type=Path)
    predict.add_argument("obs", type=Path, nargs="?", help="observed sequences")
    predict.add_argument("--n-pred", type=int, help="steps to predict after the observation")
    predict.add_argument(
        "--control",
        type=Path,
        help="JSON object mapping each sequence id to its control channel",
    )

    evaluate_verb = verbs.add_parser("eval", parents=[common], help="score a model")
    evaluate_verb.add_argument("model", type=Path)
    evaluate_verb.add_argument("data", type=Path)
    evaluate_verb.add_argument("--n-sigma", type=float, default=3.0)

    plot = verbs.add_parser("plotdata", parents=[common], help="emit plot data as CSV")
    plot.add_argument("model", type=Path)
    plot.add_argument("--grid", type=int, default=101)
    plot.add_argument("--samples", type=int, default=0)
    plot.add_argument("--n-sigma", type=float, default=3.0)

    return parser


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return args.out


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def cmd_gen(args: argparse.Namespace) -> int:
    out = _require_out(args)
    overrides = None
    if args.config is not None:
        try:
            overrides = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read generator config {args.config}: {e}") from e
    dataset, truth = generate(
        args.toy, args.seed, structured=not args.unstructured, config=overrides
    )

    out.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if args.format == "csv" else "jsonl"
    save_sequences(dataset, out / f"{args.toy}.{suffix}", args.format)
    save_meta(dataset, out / f"{args.toy}.config.json")
    if truth is not None:
        save_model(ModelFile.from_mixture(truth, dataset.n), out / f"{args.toy}.truth.json")
    print(f"M={dataset.m} n={dataset.n} d={dataset.d}")
    return EXIT_OK


def _fit_config(args: argparse.Namespace, dataset: SequenceDataset) -> FitConfig:
    return FitConfig(
        k=args.k,
        controls=args.controls,
        d=dataset.d,
        n=dataset.n,
        learning_rate=args.lr,
        max_iters=args.iters,
        batch_size=args.batch_size,
        seed=args.seed,
        loss_reduction=args.reduction,
        full_cov=args.full_cov,
        init=args.init,
        log_every=args.log_every,
        m_obs=args.conditional,
        use_control=args.use_control,
    )


def cmd_fit(args: argparse.Namespace) -> int:
    out = _require_out(args)
    dataset = load_sequences(args.data, scale=args.scale)
    cfg = _fit_config(args, dataset)
    grid = dataset.grid()

    if cfg.conditional:
        encoder, losses = fit_conditional(
            dataset.sequences,
            grid,
            cfg,
            EncoderConfig(hidden_sizes=tuple(args.hidden)),
            controls=dataset.control,
        )
        model = ModelFile.from_encoder(encoder, cfg, dataset.meta.scaler)
    else:
        mixture, losses = fit_unconditional(dataset.sequences, grid, cfg)
        model = ModelFile.from_mixture(mixture, cfg.n, cfg, scaler=dataset.meta.scaler)

    save_model(model, out)
    write_loss_trace(args.loss_trace or out.with_suffix(".loss.csv"), losses)
    print("weights=" + json.dumps(model.weights))
    print(f"final_nll={_fmt(losses[-1])}")
    return EXIT_OK


def _to_data_units(model: ModelFile, mixture: NCurveMixture) -> NCurveMixture:
    if model.scaler is None:
        return mixture
    scale = np.asarray(model.scaler.scale)
    offset = np.asarray(model.scaler.offset)
    stretch = np.outer(scale, scale)
    return NCurveMixture(
        weights=mixture.weights,
        components=tuple(
            NCurve.from_arrays(
                component.control_means * scale + offset,
                component.control_covs * stretch,
            )
            for component in mixture.components
        ),
    )


def _prediction_record(identifier: str, mixture: NCurveMixture, grid_values) -> dict[str, Any]:
    steps = []
    for t in grid_values:
        points = [curve_at(component, float(t)) for component in mixture.components]
        steps.append(
            {
                "t": float(t),
                "means": [g.mean.tolist() for g in points],
                "covs": [g.cov.tolist() for g in points],
            }
        )
    return {
        "id": identifier,
        "weights": mixture.weights.tolist(),
        "path_probabilities": mixture.weights.tolist(),
        "top_component": top_component(mixture),
        "steps": steps,
    }


def _read_control(path: Path, ids: SequenceABC[str]) -> np.ndarray:
    """Control channels keyed by sequence id, stacked in ``ids`` order."""
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    if not isinstance(document, dict):
        raise DataError(f"{path}: expected a JSON object keyed by sequence id")
    missing = [identifier for identifier in ids if identifier not in document]
    if missing:
        raise DataError(f"{path}: no control channel for sequence {missing[0]!r}")
    rows = [document[identifier] for identifier in ids]
    lengths = {len(row) if isinstance(row, list) else -1 for row in rows}
    if len(lengths) != 1 or -1 in lengths:
        raise ShapeMismatch(f"{path}: control channels must be lists of equal length")
    try:
        control = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: control values must be numbers") from e
    if control.ndim != 2 or not np.all(np.isfinite(control)):
        raise DataError(f"{path}: control values must be finite")
    return control


def cmd_predict(args: argparse.Namespace) -> int:
    out = _require_out(args)
    model = load_model(args.model)
    encoder = model.encoder_module()

    if encoder is None:
        n = args.n_pred if args.n_pred is not None else model.n
        grid = uniform_grid(n)
        ids = ["model"]
        mixtures = [model.mixture()]
    else:
        m_obs = encoder.m_obs
        n_pred = args.n_pred if args.n_pred is not None else model.n - m_obs
        if m_obs + n_pred != model.n:
            raise DataError(
                f"model predicts {model.n - m_obs} steps after m={m_obs} observations, "
                f"got --n-pred {n_pred}"
            )
        if args.obs is None:
            raise UsageError("a conditional model needs an observation file")
        observations = load_sequences(args.obs)
        if observations.n < m_obs:
            raise ShapeMismatch(
                f"observations have {observations.n} steps, the model expects m={m_obs}"
            )
        points = observations.sequences
        if model.scaler is not None:
            points = model.scaler.transform(points)
        grid = uniform_grid(model.n)
        ids = list(observations.ids)
        control = observations.control
        if args.control is not None:
            control = _read_control(args.control, observations.ids)
        mixtures = predict_many(encoder, points, grid, control)

    mixtures = [_to_data_units(model, mixture) for mixture in mixtures]
    document = {
        "grid": grid.values.tolist(),
        "predictions": [
            _prediction_record(identifier, mixture, grid.values)
            for identifier, mixture in zip(ids, mixtures)
        ],
    }
    out.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    rows = []
    for identifier, mixture in zip(ids, mixtures):
        top = mixture.components[top_component(mixture)]
        for i, t in enumerate(grid.values):
            mean = curve_at(top, float(t)).mean
            rows.append([identifier, i, _fmt(t), *map(_fmt, mean)])
    d = mixtures[0].dim
    _write_csv(
        out.with_suffix(".ml.csv"),
        ["seq_id", "step", "t"] + [f"x{a}" for a in range(d)],
        rows,
    )
    print(f"predictions={len(mixtures)} steps={len(grid)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    out = _require_out(args)
    model = load_model(args.model)
    dataset = load_sequences(args.data)
    points = dataset.sequences
    if model.scaler is not None:
        points = model.scaler.transform(points)
    if dataset.n != model.n:
        raise ShapeMismatch(f"model was fitted on n={model.n} steps, data has n={dataset.n}")
    if dataset.d != model.d:
        raise ShapeMismatch(f"model has d={model.d}, data has d={dataset.d}")

    encoder = model.encoder_module()
    config = None if model.config is None else model.config.model_dump(mode="json")
    report = evaluate(
        encoder if encoder is not None else model.mixture(),
        dataset.grid(),
        points,
        n_sigma=args.n_sigma,
        controls=dataset.control,
        config=config,
    )
    report.write_json(out)
    report.write_csv_row(out.with_suffix(".csv"))
    print(report.summary_line())
    return EXIT_OK


def cmd_plotdata(args: argparse.Namespace) -> int:
    out = _require_out(args)
    model = load_model(args.model)
    mixture = _to_data_units(model, model.mixture())
    grid = uniform_grid(args.grid)
    d = mixture.dim
    out.mkdir(parents=True, exist_ok=True)

    header = (
        ["t"]
        + [f"mean_x{a}" for a in range(d)]
        + [f"sigma_x{a}" for a in range(d)]
        + [f"half_width_x{a}" for a in range(d)]
    )
    for k, component in enumerate(mixture.components):
        band = envelope(component, grid, args.n_sigma)
        sigmas = envelope(component, grid, 1.0).half_widths
        rows = [
            [
                _fmt(t),
                *map(_fmt, band.means[i]),
                *map(_fmt, sigmas[i]),
                *map(_fmt, band.half_widths[i]),
            ]
            for i, t in enumerate(grid.values)
        ]
        _write_csv(out / f"component_{k}.csv", header, rows)

    if args.samples > 0:
        generator = as_generator(args.seed)
        rows = []
        for s in range(args.samples):
            k, realization = sample_mixture_realization(mixture, grid, generator)
            for i, t in enumerate(grid.values):
                rows.append([s, k, i, _fmt(t), *map(_fmt, realization[i])])
        _write_csv(
            out / "samples.csv",
            ["sample", "component", "step", "t"] + [f"x{a}" for a in range(d)],
            rows,
        )
    print(f"components={mixture.k} grid={len(grid)} samples={args.samples}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "plotdata": cmd_plotdata,
}


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "quiet", False):
        level = logging.WARNING
    elif getattr(args, "verbose", False):
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    logging.getLogger().setLevel(level)


def main(argv: SequenceABC[str] | None = None) -> int:
    provider = None
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args)
        if args.trace:
            provider = configure_tracing(package_version())
        with tracer.start_as_current_span(f"ncurves {args.command}"):
            return COMMANDS[args.command](args)
    except NCurveError as e:
        if e.exit_code == EXIT_NUMERICAL:
            logging.error("numerical failure: %s", e.detail, exc_info=True)
        print(e.json_error(), file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        error = UsageError(
            "invalid option value",
            messages=[f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()],
        )
        print(error.json_error(), file=sys.stderr)
        return error.exit_code
    except OSError as e:
        print(DataError(f"{e.filename or ''}: {e.strerror}").json_error(), file=sys.stderr)
        return EXIT_DATA
    finally:
        if provider is not None:
            provider.shutdown()


def run() -> None:
    sys.exit(main())


__all__ = ["build_parser", "main", "run"]
