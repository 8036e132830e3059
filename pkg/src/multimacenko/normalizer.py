"""Normalizing source images against a fitted target."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateStains, StainError
from .macenko import EstimatorParams, check_tissue, filter_od, robust_max_concentrations, stain_matrix_from_tissue
from .multi_target import ReferenceProfile, StochasticProfile
from .od import as_rgb, deconvolve, od_to_rgb, reconstruct_od, rgb_to_od


@dataclass(frozen=True, eq=False)
class NormalizationResult:
    image: np.ndarray
    source_stain_matrix: np.ndarray
    source_max_c: np.ndarray
    chosen_reference_index: int | None = None


@dataclass(frozen=True)
class ImageFailure:
    """A batch job that raised instead of producing an image."""

    index: int
    error: StainError

    @property
    def kind(self) -> str:
        return type(self.error).__name__

    def __str__(self) -> str:
        return f"{self.kind}: {self.error}"


def resolve_target(
    profile: ReferenceProfile | StochasticProfile, draw_index: int | None = None
) -> tuple[ReferenceProfile, int | None]:
    """Pick the concrete target for one normalization call.

    Stochastic profiles draw a reference: job ``draw_index`` if given,
    otherwise the next value of the profile's own sequence.
    """
    if isinstance(profile, StochasticProfile):
        k = profile.next_draw() if draw_index is None else profile.draw(draw_index)
        return profile.candidates[k], k
    return profile, None


def normalize_od(source, target: ReferenceProfile, params: EstimatorParams = EstimatorParams()):
    """Normalized OD pixels of ``source`` plus the source stain matrix and maxC.

    The stain matrix and maxC come from the source's tissue pixels, but every
    pixel is deconvolved, rescaled by the maxC ratio and re-rendered under
    the target matrix.
    """
    od = rgb_to_od(as_rgb(source), params.i0)
    tissue = filter_od(od, params.beta)
    check_tissue(tissue, params)
    v_src = stain_matrix_from_tissue(tissue, params)
    max_c_src = robust_max_concentrations(tissue, v_src)
    if not np.all(max_c_src > 0):
        raise DegenerateStains(f"source robust max concentrations must be positive, got {max_c_src}")
    conc = deconvolve(od, v_src)
    conc = conc * (target.max_c / max_c_src)[:, None]
    return reconstruct_od(conc, target.stain_matrix), v_src, max_c_src


def normalize(
    source,
    profile: ReferenceProfile | StochasticProfile,
    params: EstimatorParams = EstimatorParams(),
    draw_index: int | None = None,
) -> NormalizationResult:
    """Re-render ``source`` with the target's stains."""
    source = as_rgb(source)
    target, chosen = resolve_target(profile, draw_index)
    od, v_src, max_c_src = normalize_od(source, target, params)
    image = od_to_rgb(od, params.i0, source.shape[:2])
    return NormalizationResult(image, v_src, max_c_src, chosen)


def normalize_batch(
    sources: Sequence,
    profile: ReferenceProfile | StochasticProfile,
    params: EstimatorParams = EstimatorParams(),
    jobs: int = 1,
) -> list[NormalizationResult | ImageFailure]:
    """Normalize every source; failures come back as :class:`ImageFailure` in place.

    Job ``k`` of a stochastic batch always uses draw ``k``, so output does not
    depend on ``jobs``.
    """

    def run(k: int):
        try:
            return normalize(sources[k], profile, params, draw_index=k)
        except StainError as err:
            return ImageFailure(k, err)

    if jobs <= 1:
        return [run(k) for k in range(len(sources))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, range(len(sources))))
