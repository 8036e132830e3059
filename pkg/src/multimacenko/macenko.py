"""Single-image Macenko stain matrix estimation.

The estimator only looks at the multiset of tissue pixels: OD pixels above
the threshold are reduced to their dominant plane, each pixel becomes an
angle in that plane, and the robust angular extremes are taken as the two
stain directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloud, DegenerateStains, EmptyAngles, InsufficientTissue
from .od import DEFAULT_I0, deconvolve, rgb_to_od

MAX_C_PERCENTILE = 99.0

# second eigenvalue below this fraction of the first means a rank-1 cloud
_RANK_TOL = 1e-12
_MIN_PROJECTION = 1e-12
_MIN_STAIN_SPREAD = 1e-3


@dataclass(frozen=True)
class EstimatorParams:
    """Knobs of the Macenko estimator.

    beta is the OD threshold below which a pixel counts as background,
    alpha the angular percentile (in percent) used for the robust extremes.
    """

    beta: float = 0.15
    alpha: float = 1.0
    min_tissue_pixels: int = 100
    i0: float = DEFAULT_I0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.alpha < 50:
            raise ValueError(f"alpha must lie in (0, 50), got {self.alpha}")
        if self.min_tissue_pixels < 3:
            raise ValueError("min_tissue_pixels must be at least 3")
        if not self.i0 > 0:
            raise ValueError("i0 must be positive")


@dataclass(frozen=True, eq=False)
class PlaneBasis:
    """Orthonormal pair spanning the dominant OD plane, sign-fixed."""

    e1: np.ndarray
    e2: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([self.e1, self.e2], axis=1)


def sign_fix(vec: np.ndarray) -> np.ndarray:
    """Negate ``vec`` when its components sum to a negative number."""
    return -vec if vec.sum() < 0 else vec


def order_stains(v: np.ndarray) -> np.ndarray:
    """Put the hematoxylin column first.

    Hematoxylin absorbs red more strongly, so the column with the larger
    red OD wins; ties fall back to the green component.
    """
    a, b = v[:, 0], v[:, 1]
    if a[0] > b[0] or (a[0] == b[0] and a[1] >= b[1]):
        return v
    return v[:, ::-1].copy()


def filter_od(od: np.ndarray, beta: float) -> np.ndarray:
    """Keep pixels whose every OD component exceeds ``beta``, in input order."""
    od = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    return od[np.all(od > beta, axis=1)]


def scatter_matrix(od: np.ndarray) -> np.ndarray:
    """Uncentred 3x3 scatter matrix ``od.T @ od``."""
    s = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            s[i, j] = s[j, i] = np.sum(od[:, i] * od[:, j])
    return s


def plane_basis(od: np.ndarray) -> PlaneBasis:
    """Top-two right singular directions of the ``(N, 3)`` OD matrix."""
    od = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    if od.shape[0] < 3:
        raise DegenerateCloud(f"need at least 3 pixels for a plane, got {od.shape[0]}")
    evals, evecs = np.linalg.eigh(scatter_matrix(od))
    if not evals[2] > 0 or evals[1] < _RANK_TOL * evals[2]:
        raise DegenerateCloud("OD cloud is (nearly) rank one")
    return PlaneBasis(sign_fix(evecs[:, 2]), sign_fix(evecs[:, 1]))


def project_angles(od: np.ndarray, basis: PlaneBasis) -> np.ndarray:
    """Angle of each pixel in the basis plane, measured from ``e1``.

    Pixels whose in-plane projection vanishes are dropped.
    """
    od = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    b = basis.matrix
    x = od[:, 0] * b[0, 0] + od[:, 1] * b[1, 0] + od[:, 2] * b[2, 0]
    y = od[:, 0] * b[0, 1] + od[:, 1] * b[1, 1] + od[:, 2] * b[2, 1]
    keep = np.hypot(x, y) >= _MIN_PROJECTION
    return np.arctan2(y[keep], x[keep])


def robust_extremes(angles, alpha: float) -> tuple[float, float]:
    """The alpha-th and (100 - alpha)-th percentiles, linearly interpolated."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size == 0:
        raise EmptyAngles("no angles to take percentiles of")
    lo, hi = np.percentile(angles, [alpha, 100.0 - alpha])
    return float(lo), float(hi)


def stains_from_angles(basis: PlaneBasis, phi_min: float, phi_max: float) -> np.ndarray:
    """Map two in-plane angles back to unit OD vectors, H column first."""
    if abs(phi_max - phi_min) < _MIN_STAIN_SPREAD:
        raise DegenerateStains(
            f"robust extremes {phi_min:.6f} and {phi_max:.6f} rad are too close to separate two stains"
        )
    cols = []
    for phi in (phi_min, phi_max):
        vec = np.cos(phi) * basis.e1 + np.sin(phi) * basis.e2
        cols.append(vec / np.linalg.norm(vec))
    return order_stains(np.stack(cols, axis=1))


def check_tissue(tissue: np.ndarray, params: EstimatorParams) -> None:
    if tissue.shape[0] < params.min_tissue_pixels:
        raise InsufficientTissue(
            f"{tissue.shape[0]} pixels above beta={params.beta}, need {params.min_tissue_pixels}"
        )


def stain_matrix_from_tissue(
    tissue: np.ndarray, params: EstimatorParams, basis: PlaneBasis | None = None
) -> np.ndarray:
    """Run plane fit, projection and extremes on already-filtered OD pixels.

    A precomputed ``basis`` skips the plane fit.
    """
    check_tissue(tissue, params)
    if basis is None:
        basis = plane_basis(tissue)
    phi_min, phi_max = robust_extremes(project_angles(tissue, basis), params.alpha)
    return stains_from_angles(basis, phi_min, phi_max)


def tissue_od(image, params: EstimatorParams) -> np.ndarray:
    """OD pixels of ``image`` that survive the background threshold."""
    return filter_od(rgb_to_od(image, params.i0), params.beta)


def estimate_stain_matrix(image, params: EstimatorParams = EstimatorParams()) -> np.ndarray:
    """Estimate the ``(3, 2)`` stain matrix of an RGB image."""
    return stain_matrix_from_tissue(tissue_od(image, params), params)


def robust_max_concentrations(tissue: np.ndarray, v: np.ndarray) -> np.ndarray:
    """99th percentile of each stain's concentration over ``tissue``."""
    conc = deconvolve(tissue, v)
    return np.percentile(conc, MAX_C_PERCENTILE, axis=1)


def max_concentrations(image, v: np.ndarray, params: EstimatorParams = EstimatorParams()) -> np.ndarray:
    """Robust per-stain maximum concentrations ``(maxC_h, maxC_e)`` of an image."""
    tissue = tissue_od(image, params)
    check_tissue(tissue, params)
    return robust_max_concentrations(tissue, v)
