"""Generalized tensor network classifiers: matrix product states, string-bond
states, entangled plaquette states and RBM-equivalent networks over
per-variable feature maps, trained by minibatch gradient descent."""

import os as _os

# GTN_NUM_THREADS caps the BLAS pool; it must be applied before numpy loads.
if _os.environ.get("GTN_NUM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["GTN_NUM_THREADS"])

from .architecture import ArchitectureSpec, Model, build, rbm_to_sbs  # noqa: E402
from .data import Dataset  # noqa: E402
from .errors import (GTNError, NumericOverflowError, ParseError, ResourceError,  # noqa: E402
                     ValidationError)
from .evaluate import loss, loss_and_gradient, posterior, predict, score, scores  # noqa: E402
from .features import FeatureMap, make_feature_map  # noqa: E402
from .training import Metrics, TrainConfig, grid_search, sgd_fit  # noqa: E402

__all__ = [
    "ArchitectureSpec", "Model", "build", "rbm_to_sbs", "Dataset", "GTNError",
    "NumericOverflowError", "ParseError", "ResourceError", "ValidationError", "loss",
    "loss_and_gradient", "posterior", "predict", "score", "scores", "FeatureMap",
    "make_feature_map", "Metrics", "TrainConfig", "grid_search", "sgd_fit",
]
__version__ = "0.1.0"
