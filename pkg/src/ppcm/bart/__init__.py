"""Sum-of-trees regression with a sparse Dirichlet splitting-rule prior."""

from .model import (
    CONTINUOUS,
    PROBIT,
    BartConfig,
    Forest,
    PosteriorEnsemble,
    fit_continuous,
    fit_probit,
    predict,
    with_seed,
)
from .sampler import (
    draw_dart_theta,
    draw_sigma2,
    leaf_posterior,
    update_dart_split_probs,
)
from .trees import Tree

__all__ = [
    "CONTINUOUS",
    "PROBIT",
    "BartConfig",
    "Forest",
    "PosteriorEnsemble",
    "Tree",
    "draw_dart_theta",
    "draw_sigma2",
    "fit_continuous",
    "fit_probit",
    "leaf_posterior",
    "predict",
    "update_dart_split_probs",
    "with_seed",
]
