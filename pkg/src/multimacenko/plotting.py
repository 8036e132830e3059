"""Figures for profiles and normalization comparisons.

Everything renders off-screen with the Agg backend and writes straight to
a file; nothing is shown interactively.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .multi_target import ReferenceProfile, StochasticProfile  # noqa: E402
from .od import od_to_rgb  # noqa: E402

CHANNELS = ("R", "G", "B")
STAIN_NAMES = ("hematoxylin", "eosin")

_STYLE = {
    "font.size": 8,
    "axes.titlesize": 8,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def stain_swatch(vector: np.ndarray, concentration: float = 1.0, i0: float = 255.0) -> np.ndarray:
    """RGB colour of one stain at the given concentration."""
    return od_to_rgb(np.asarray(vector)[None, :] * concentration, i0)[0]


def _profiles(profile) -> list[ReferenceProfile]:
    if isinstance(profile, StochasticProfile):
        return list(profile.candidates)
    return [profile]


def plot_profile(profile: ReferenceProfile | StochasticProfile, path, i0: float = 255.0) -> None:
    """Bar chart of each stain vector per channel with a swatch at half its maxC.

    Stochastic profiles get one row per candidate reference.
    """
    rows = _profiles(profile)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(len(rows), 2, figsize=(5.0, 1.9 * len(rows)), squeeze=False,
                                 gridspec_kw={"width_ratios": [3, 1]}, layout="constrained")
        x = np.arange(3)
        for r, prof in enumerate(rows):
            ax, sw = axes[r]
            for j, name in enumerate(STAIN_NAMES):
                ax.bar(x + (j - 0.5) * 0.38, prof.stain_matrix[:, j], width=0.38,
                       color=stain_swatch(prof.stain_matrix[:, j], 0.5 * prof.max_c[j], i0) / 255.0,
                       edgecolor="k", linewidth=0.5, label=f"{name} (maxC {prof.max_c[j]:.3f})")
            ax.set_xticks(x, CHANNELS)
            ax.set_ylim(0, 1)
            ax.set_ylabel("OD")
            ax.legend(loc="upper right", frameon=False)
            if len(rows) > 1:
                ax.set_title(f"reference {r}")
            swatch = np.stack([stain_swatch(prof.stain_matrix[:, j], 0.5 * prof.max_c[j], i0) for j in range(2)])
            sw.imshow(swatch[:, None, :].repeat(2, axis=1), aspect="auto")
            sw.set_xticks([])
            sw.set_yticks([0, 1], ["H", "E"])
        fig.suptitle(f"{profile.strategy.value} profile, {profile.source_count} reference(s)")
        fig.savefig(path)
        plt.close(fig)


def plot_comparison(images: dict[str, np.ndarray], path, ncols: int | None = None) -> None:
    """Grid of labelled images, e.g. one input normalized against several targets."""
    n = len(images)
    ncols = ncols or min(n, 4)
    nrows = math.ceil(n / ncols)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(1.9 * ncols, 2.0 * nrows), squeeze=False,
                                 layout="constrained")
        for ax in axes.flat:
            ax.axis("off")
        for ax, (label, img) in zip(axes.flat, images.items()):
            ax.imshow(img)
            ax.set_title(label)
        fig.savefig(path)
        plt.close(fig)
