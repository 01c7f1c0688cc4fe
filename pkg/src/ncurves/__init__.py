"""
N-Curve mixtures: Bézier curves with Gaussian control points

Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

# F403 - deals with ruff's detection of underpinning objects beneath '*' to determine whether they are used here or not
from ncurves.errors import *  # noqa: F403
from ncurves.gaussian import *  # noqa: F403
from ncurves.ncurve import *  # noqa: F403
from ncurves.parameters import *  # noqa: F403
from ncurves.head import *  # noqa: F403
from ncurves.train import *  # noqa: F403
from ncurves.datagen import *  # noqa: F403
from ncurves.metrics import *  # noqa: F403
from ncurves.model_file import *  # noqa: F403
from ncurves import type_hints


# F405 - deals with non-explicitly defined variables within the namespace that are imported via '*'
__all__ = [
    "DataError",  # noqa: F405
    "DimensionMismatch",  # noqa: F405
    "EmptyDataset",  # noqa: F405
    "EmptyFile",  # noqa: F405
    "EmptyInput",  # noqa: F405
    "EncoderConfig",  # noqa: F405
    "EvalReport",  # noqa: F405
    "FitConfig",  # noqa: F405
    "FitResult",  # noqa: F405
    "GaussianDist",  # noqa: F405
    "IndexGrid",  # noqa: F405
    "MixtureEncoder",  # noqa: F405
    "MixtureLayout",  # noqa: F405
    "ModelFile",  # noqa: F405
    "ModelFileError",  # noqa: F405
    "NCurve",  # noqa: F405
    "NCurveError",  # noqa: F405
    "NCurveMixture",  # noqa: F405
    "NonFiniteLoss",  # noqa: F405
    "NotPositiveDefinite",  # noqa: F405
    "NotPSD",  # noqa: F405
    "NumericalError",  # noqa: F405
    "OutOfRange",  # noqa: F405
    "ParseError",  # noqa: F405
    "RaggedSequence",  # noqa: F405
    "Scaler",  # noqa: F405
    "SequenceDataset",  # noqa: F405
    "ShapeMismatch",  # noqa: F405
    "TooShort",  # noqa: F405
    "TrainState",  # noqa: F405
    "UsageError",  # noqa: F405
    "affine_combine",  # noqa: F405
    "bernstein",  # noqa: F405
    "bernstein_row",  # noqa: F405
    "coverage",  # noqa: F405
    "curve_at",  # noqa: F405
    "curve_log_density",  # noqa: F405
    "encode_params",  # noqa: F405
    "envelope",  # noqa: F405
    "evaluate",  # noqa: F405
    "fde",  # noqa: F405
    "fit_conditional",  # noqa: F405
    "fit_unconditional",  # noqa: F405
    "gen_toy1",  # noqa: F405
    "gen_toy2",  # noqa: F405
    "gen_toy3",  # noqa: F405
    "gen_toy4",  # noqa: F405
    "gen_toy5",  # noqa: F405
    "gradient",  # noqa: F405
    "load_model",  # noqa: F405
    "load_sequences",  # noqa: F405
    "log_density",  # noqa: F405
    "match_components",  # noqa: F405
    "mc_moments",  # noqa: F405
    "mixture_at",  # noqa: F405
    "mixture_log_density",  # noqa: F405
    "mixture_nll",  # noqa: F405
    "nll_metric",  # noqa: F405
    "predict",  # noqa: F405
    "realize",  # noqa: F405
    "rmse",  # noqa: F405
    "sample",  # noqa: F405
    "sample_mixture_realization",  # noqa: F405
    "sample_realization",  # noqa: F405
    "save_model",  # noqa: F405
    "save_sequences",  # noqa: F405
    "sequence_loglik",  # noqa: F405
    "type_hints",
    "uniform_grid",  # noqa: F405
]
