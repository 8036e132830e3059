"""Macenko stain normalization with multiple reference images."""

from .errors import (
    DegenerateBasis,
    DegenerateCloud,
    DegenerateStains,
    DimensionMismatch,
    EmptyImage,
    InsufficientTissue,
    SingularStainMatrix,
    StainError,
)
from .macenko import EstimatorParams, estimate_stain_matrix, max_concentrations
from .multi_target import (
    ReferenceProfile,
    ReferenceSet,
    StochasticProfile,
    Strategy,
    fit,
    fit_avg_post,
    fit_avg_pre,
    fit_concat,
    fit_macenko,
    fit_stochastic,
)
from .normalizer import ImageFailure, NormalizationResult, normalize, normalize_batch
from .od import deconvolve, od_to_rgb, reconstruct, rgb_to_od

__version__ = "0.1.0"
