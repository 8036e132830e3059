"""Fitting one normalization target from several reference images.

Four ways of combining a reference set are supported:

* ``stochastic`` keeps every reference's own profile and draws one of them
  for each image that gets normalized;
* ``concat`` pools the tissue pixels of all references and runs the
  estimator once on the pool;
* ``avg-pre`` averages the per-reference plane bases and takes the angular
  extremes of the pooled pixels in the averaged plane;
* ``avg-post`` averages the per-reference stain matrices.

Plain single-image Macenko is available as the ``macenko`` strategy.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DegenerateBasis, DegenerateStains, StainError
from .macenko import (
    EstimatorParams,
    PlaneBasis,
    check_tissue,
    order_stains,
    plane_basis,
    robust_max_concentrations,
    sign_fix,
    stain_matrix_from_tissue,
    tissue_od,
)
from .od import as_rgb, check_stain_matrix

_MIN_ORTHOGONAL_NORM = 1e-9


class Strategy(str, Enum):
    MACENKO = "macenko"
    STOCHASTIC = "stochastic"
    CONCAT = "concat"
    AVG_PRE = "avg-pre"
    AVG_POST = "avg-post"


@dataclass(frozen=True, eq=False)
class ReferenceProfile:
    """A fitted normalization target."""

    stain_matrix: np.ndarray
    max_c: np.ndarray
    strategy: Strategy = Strategy.MACENKO
    source_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stain_matrix", check_stain_matrix(self.stain_matrix))
        max_c = np.array(self.max_c, dtype=np.float64).reshape(2)
        if not np.all(max_c > 0):
            raise DegenerateStains(f"robust max concentrations must be positive, got {max_c}")
        object.__setattr__(self, "max_c", max_c)
        object.__setattr__(self, "strategy", Strategy(self.strategy))


class StochasticProfile:
    """Per-reference profiles plus a seeded rule for picking one per job.

    ``draw(k)`` is a pure function of ``(seed, k)``, so job ``k`` of a batch
    always gets the same reference no matter how the batch is scheduled.
    ``next_draw()`` walks the same sequence for one-off calls.
    """

    strategy = Strategy.STOCHASTIC

    def __init__(self, candidates: Sequence[ReferenceProfile], seed: int):
        if not candidates:
            raise ValueError("a stochastic profile needs at least one candidate")
        self.candidates = tuple(candidates)
        self.seed = int(seed)
        self._counter = 0
        self._lock = threading.Lock()

    @property
    def source_count(self) -> int:
        return len(self.candidates)

    def draw(self, k: int) -> int:
        """Index of the reference used for the ``k``-th normalization."""
        seq = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(k),))
        return int(np.random.default_rng(seq).integers(len(self.candidates)))

    def next_draw(self) -> int:
        with self._lock:
            k = self._counter
            self._counter += 1
        return self.draw(k)

    def reset(self) -> None:
        with self._lock:
            self._counter = 0


class ReferenceSet:
    """An ordered, non-empty list of reference images.

    Per-image tissue pixels, plane bases and single-image fits are computed
    on demand and cached per parameter set. Failures are re-raised with the
    image index attached.
    """

    def __init__(self, images: Sequence):
        images = [as_rgb(im) for im in images]
        if not images:
            raise ValueError("a reference set needs at least one image")
        self.images = images
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.images)

    def _cached(self, kind: str, i: int, params: EstimatorParams, compute):
        key = (kind, i, params)
        if key not in self._cache:
            try:
                self._cache[key] = compute()
            except StainError as err:
                if err.index is not None:
                    raise
                raise err.with_index(i) from err
        return self._cache[key]

    def tissue(self, i: int, params: EstimatorParams) -> np.ndarray:
        return self._cached("tissue", i, params, lambda: tissue_od(self.images[i], params))

    def basis(self, i: int, params: EstimatorParams) -> PlaneBasis:
        def compute():
            tissue = self.tissue(i, params)
            check_tissue(tissue, params)
            return plane_basis(tissue)

        return self._cached("basis", i, params, compute)

    def profile(self, i: int, params: EstimatorParams) -> ReferenceProfile:
        """Single-image Macenko profile of reference ``i``."""

        def compute():
            tissue = self.tissue(i, params)
            v = stain_matrix_from_tissue(tissue, params, self.basis(i, params))
            return ReferenceProfile(v, robust_max_concentrations(tissue, v))

        return self._cached("profile", i, params, compute)

    def pooled_tissue(self, params: EstimatorParams) -> np.ndarray:
        return np.concatenate([self.tissue(i, params) for i in range(len(self))], axis=0)


def _as_reference_set(refs) -> ReferenceSet:
    return refs if isinstance(refs, ReferenceSet) else ReferenceSet(refs)


def fit_macenko(image, params: EstimatorParams = EstimatorParams()) -> ReferenceProfile:
    """Classic single-reference target."""
    return ReferenceSet([image]).profile(0, params)


def fit_stochastic(refs, params: EstimatorParams = EstimatorParams(), seed: int = 0) -> StochasticProfile:
    refs = _as_reference_set(refs)
    candidates = [refs.profile(i, params) for i in range(len(refs))]
    return StochasticProfile(candidates, seed)


def _fit_pooled(tissue: np.ndarray, params: EstimatorParams, basis: PlaneBasis | None):
    v = stain_matrix_from_tissue(tissue, params, basis)
    return v, robust_max_concentrations(tissue, v)


def fit_concat(refs, params: EstimatorParams = EstimatorParams()) -> ReferenceProfile:
    """Run the estimator on the pooled tissue pixels of every reference."""
    refs = _as_reference_set(refs)
    v, max_c = _fit_pooled(refs.pooled_tissue(params), params, None)
    return ReferenceProfile(v, max_c, Strategy.CONCAT, len(refs))


def average_plane_bases(bases: Sequence[PlaneBasis]) -> PlaneBasis:
    """Mean of the sign-fixed basis vectors, re-orthonormalized with e1 kept as anchor."""
    m1 = np.mean([b.e1 for b in bases], axis=0)
    m2 = np.mean([b.e2 for b in bases], axis=0)
    n1 = np.linalg.norm(m1)
    if n1 < _MIN_ORTHOGONAL_NORM:
        raise DegenerateBasis("averaged first direction vanishes")
    e1 = m1 / n1
    e2 = m2 - (m2 @ e1) * e1
    n2 = np.linalg.norm(e2)
    if n2 < _MIN_ORTHOGONAL_NORM:
        raise DegenerateBasis("averaged basis vectors are collinear")
    return PlaneBasis(sign_fix(e1), sign_fix(e2 / n2))


def fit_avg_pre(refs, params: EstimatorParams = EstimatorParams()) -> ReferenceProfile:
    """Average the reference planes, then take extremes of the pooled pixels in that plane."""
    refs = _as_reference_set(refs)
    basis = average_plane_bases([refs.basis(i, params) for i in range(len(refs))])
    v, max_c = _fit_pooled(refs.pooled_tissue(params), params, basis)
    return ReferenceProfile(v, max_c, Strategy.AVG_PRE, len(refs))


def average_stain_matrices(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of H/E-ordered stain matrices with unit columns restored."""
    ordered = [order_stains(np.asarray(v, dtype=np.float64)) for v in matrices]
    mean = np.mean(ordered, axis=0)
    return mean / np.linalg.norm(mean, axis=0)


def fit_avg_post(refs, params: EstimatorParams = EstimatorParams()) -> ReferenceProfile:
    """Average the per-reference stain matrices and robust max concentrations."""
    refs = _as_reference_set(refs)
    profiles = [refs.profile(i, params) for i in range(len(refs))]
    v = average_stain_matrices([p.stain_matrix for p in profiles])
    max_c = np.mean([p.max_c for p in profiles], axis=0)
    return ReferenceProfile(v, max_c, Strategy.AVG_POST, len(refs))


def fit(
    refs,
    strategy: Strategy | str = Strategy.AVG_POST,
    params: EstimatorParams = EstimatorParams(),
    seed: int = 0,
) -> ReferenceProfile | StochasticProfile:
    """Fit a target from ``refs`` with the named strategy."""
    strategy = Strategy(strategy)
    refs = _as_reference_set(refs)
    if strategy is Strategy.MACENKO:
        if len(refs) != 1:
            raise ValueError(f"the macenko strategy takes exactly one reference, got {len(refs)}")
        return refs.profile(0, params)
    if strategy is Strategy.STOCHASTIC:
        return fit_stochastic(refs, params, seed)
    if strategy is Strategy.CONCAT:
        return fit_concat(refs, params)
    if strategy is Strategy.AVG_PRE:
        return fit_avg_pre(refs, params)
    return fit_avg_post(refs, params)
