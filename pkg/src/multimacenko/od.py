"""Optical density conversions, colour deconvolution and reconstruction.

Images are ``uint8`` arrays of shape ``(H, W, 3)``; optical densities are
float64 arrays of shape ``(N, 3)`` with one row per pixel in row-major order;
stain matrices are ``(3, 2)`` arrays whose columns are unit stain vectors
(hematoxylin first); concentrations are ``(2, N)`` arrays.

Products against the pixel axis are spelled out column by column instead of
going through BLAS so results do not depend on the thread count.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyImage, SingularStainMatrix

DEFAULT_I0 = 255.0

# columns closer than this (radians) are treated as collinear
MIN_STAIN_ANGLE = 1e-6


def as_rgb(image) -> np.ndarray:
    """Validate and coerce ``image`` into a ``(H, W, 3)`` uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("channel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def mix(matrix: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Return ``pixels @ matrix.T`` for ``pixels`` of shape ``(N, k)``.

    Each output column is an explicit left-to-right sum, so the result is
    bitwise reproducible regardless of BLAS threading.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    rows, k = matrix.shape
    out = np.empty((pixels.shape[0], rows), dtype=np.float64)
    for r in range(rows):
        acc = matrix[r, 0] * pixels[:, 0]
        for j in range(1, k):
            acc = acc + matrix[r, j] * pixels[:, j]
        out[:, r] = acc
    return out


def rgb_to_od(image, i0: float = DEFAULT_I0) -> np.ndarray:
    """Convert an RGB image to per-pixel optical density, ``-log10(I / i0)``.

    Zero intensities are clamped to 1 so the result stays finite.
    Accepts ``(H, W, 3)`` images or ``(N, 3)`` pixel lists.
    """
    if i0 <= 0:
        raise ValueError("i0 must be positive")
    arr = np.asarray(image)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    if arr.shape[-1] != 3:
        raise DimensionMismatch(f"expected 3 channels, got shape {arr.shape}")
    pixels = arr.reshape(-1, 3).astype(np.float64)
    return -np.log10(np.maximum(pixels, 1.0) / i0)


def od_to_rgb(od: np.ndarray, i0: float = DEFAULT_I0, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Map optical densities back to 8-bit intensities.

    Values are rounded half-up and clamped to ``[0, 255]``. With ``shape``
    given as ``(H, W)`` the result is reshaped into an image.
    """
    od = np.asarray(od, dtype=np.float64)
    intensity = np.floor(i0 * np.power(10.0, -od) + 0.5)
    rgb = np.clip(intensity, 0, 255).astype(np.uint8)
    if shape is not None:
        rgb = rgb.reshape(shape[0], shape[1], 3)
    return rgb


def stain_angle(v: np.ndarray) -> float:
    """Angle in radians between the two columns of ``v``."""
    a, b = v[:, 0], v[:, 1]
    cross = np.linalg.norm(np.cross(a, b))
    return float(np.arctan2(cross, np.dot(a, b)))


def pseudo_inverse(v: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a 3x2 stain matrix via the 2x2 normal equations."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3, 2):
        raise DimensionMismatch(f"stain matrix must be 3x2, got {v.shape}")
    if stain_angle(v) <= MIN_STAIN_ANGLE:
        raise SingularStainMatrix("stain vectors are (nearly) collinear")
    a = v[:, 0] @ v[:, 0]
    b = v[:, 0] @ v[:, 1]
    d = v[:, 1] @ v[:, 1]
    det = a * d - b * b
    gram_inv = np.array([[d, -b], [-b, a]]) / det
    return gram_inv @ v.T


def deconvolve(od: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Least-squares stain concentrations ``(2, N)`` for OD pixels ``(N, 3)``.

    Negative concentrations are kept.
    """
    pinv = pseudo_inverse(v)
    od = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    return mix(pinv, od).T


def reconstruct(
    concentrations: np.ndarray,
    v_ref: np.ndarray,
    i0: float = DEFAULT_I0,
    shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Render concentrations under ``v_ref`` back to RGB."""
    od = reconstruct_od(concentrations, v_ref)
    if shape is not None and shape[0] * shape[1] != od.shape[0]:
        raise DimensionMismatch(f"{od.shape[0]} pixels cannot fill a {shape[0]}x{shape[1]} image")
    return od_to_rgb(od, i0, shape)


def reconstruct_od(concentrations: np.ndarray, v_ref: np.ndarray) -> np.ndarray:
    """OD pixels ``(N, 3)`` for concentrations clamped at zero."""
    s = np.asarray(concentrations, dtype=np.float64)
    v_ref = np.asarray(v_ref, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != 2:
        raise DimensionMismatch(f"concentrations must be (2, N), got {s.shape}")
    if v_ref.shape != (3, 2):
        raise DimensionMismatch(f"stain matrix must be 3x2, got {v_ref.shape}")
    return mix(v_ref, np.maximum(s, 0.0).T)


def check_stain_matrix(v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate shape, unit columns and independence; return a float copy."""
    v = np.array(v, dtype=np.float64)
    if v.shape != (3, 2):
        raise DimensionMismatch(f"stain matrix must be 3x2, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("stain matrix has non-finite entries")
    norms = np.linalg.norm(v, axis=0)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError(f"stain vectors must have unit norm, got {norms}")
    if stain_angle(v) <= MIN_STAIN_ANGLE:
        raise SingularStainMatrix("stain vectors are (nearly) collinear")
    return v
