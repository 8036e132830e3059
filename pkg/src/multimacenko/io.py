"""Reading and writing images and fitted profiles."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, SchemaVersionMismatch, UnsupportedFormat
from .macenko import EstimatorParams
from .multi_target import ReferenceProfile, StochasticProfile, Strategy
from .od import as_rgb

FORMAT_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8"
# PNG colour types: 2 = RGB, 3 = palette, 6 = RGBA
_PNG_COLOR_TYPES = {2, 3, 6}


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB or RGBA PNG, or an RGB JPEG, as ``(H, W, 3)`` uint8.

    Alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with open(path, "rb") as fh:
        head = fh.read(32)
    if head.startswith(_PNG_MAGIC):
        if len(head) < 26 or head[12:16] != b"IHDR":
            raise DecodeError(f"{path}: truncated PNG header")
        bit_depth, color_type = head[24], head[25]
        if bit_depth != 8 or color_type not in _PNG_COLOR_TYPES:
            raise UnsupportedFormat(
                f"{path}: only 8-bit RGB/RGBA PNGs are supported (bit depth {bit_depth}, colour type {color_type})"
            )
    elif not head.startswith(_JPEG_MAGIC):
        raise UnsupportedFormat(f"{path}: not a PNG or JPEG file")
    try:
        with Image.open(path) as im:
            if im.format == "JPEG" and im.mode != "RGB":
                raise UnsupportedFormat(f"{path}: JPEG mode {im.mode} is not RGB")
            im.load()
            rgb = im.convert("RGB")
    except UnsupportedFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as err:
        raise DecodeError(f"{path}: {err}") from err
    return np.asarray(rgb, dtype=np.uint8).copy()


def save_image(image, path) -> None:
    """Write ``image`` as a lossless PNG."""
    Image.fromarray(as_rgb(image)).save(path, format="PNG")


def list_images(path) -> list[Path]:
    """The image files under a directory in lexicographic order, or ``[path]`` for a file."""
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    return [path]


@dataclass(eq=False)
class ProfileDocument:
    """A fitted profile together with the parameters it was fitted under."""

    profile: ReferenceProfile | StochasticProfile
    params: EstimatorParams = field(default_factory=EstimatorParams)
    created_at: str = ""
    format_version: int = FORMAT_VERSION

    @property
    def strategy(self) -> Strategy:
        return self.profile.strategy

    @property
    def seed(self) -> int | None:
        return self.profile.seed if isinstance(self.profile, StochasticProfile) else None


def _matrix_to_list(v: np.ndarray) -> list[float]:
    # column-major: H then E
    return [float(x) for x in np.asarray(v).T.reshape(-1)]


def _matrix_from_list(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != (6,):
        raise DecodeError(f"stain_matrix must hold 6 numbers, got {arr.shape}")
    return arr.reshape(2, 3).T.copy()


def profile_to_dict(doc: ProfileDocument) -> dict:
    profile = doc.profile
    if isinstance(profile, StochasticProfile):
        head = profile.candidates[0]
    else:
        head = profile
    out = {
        "format_version": doc.format_version,
        "strategy": profile.strategy.value,
        "stain_matrix": _matrix_to_list(head.stain_matrix),
        "max_c": [float(x) for x in head.max_c],
        "params": {
            "beta": doc.params.beta,
            "alpha": doc.params.alpha,
            "i0": doc.params.i0,
            "min_tissue_pixels": doc.params.min_tissue_pixels,
        },
        "source_count": profile.source_count,
        "created_at": doc.created_at,
        "seed": doc.seed,
    }
    if isinstance(profile, StochasticProfile):
        out["candidates"] = [
            {"stain_matrix": _matrix_to_list(c.stain_matrix), "max_c": [float(x) for x in c.max_c]}
            for c in profile.candidates
        ]
    return out


def profile_from_dict(data: dict) -> ProfileDocument:
    if not isinstance(data, dict) or "format_version" not in data:
        raise SchemaVersionMismatch("profile document has no format_version")
    if data["format_version"] != FORMAT_VERSION:
        raise SchemaVersionMismatch(
            f"profile format_version {data['format_version']!r}, this build reads {FORMAT_VERSION}"
        )
    try:
        strategy = Strategy(data["strategy"])
        params = EstimatorParams(**data["params"])
        if strategy is Strategy.STOCHASTIC:
            candidates = [
                ReferenceProfile(_matrix_from_list(c["stain_matrix"]), c["max_c"]) for c in data["candidates"]
            ]
            profile = StochasticProfile(candidates, data["seed"])
        else:
            profile = ReferenceProfile(
                _matrix_from_list(data["stain_matrix"]), data["max_c"], strategy, int(data["source_count"])
            )
    except (KeyError, TypeError, ValueError) as err:
        raise DecodeError(f"malformed profile document: {err!r}") from err
    return ProfileDocument(profile, params, data.get("created_at", ""), data["format_version"])


def save_profile(doc: ProfileDocument, path) -> None:
    """Write ``doc`` as UTF-8 JSON; floats keep their exact value."""
    if not doc.created_at:
        doc.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = json.dumps(profile_to_dict(doc), indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_profile(path) -> ProfileDocument:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such profile: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DecodeError(f"{path}: {err}") from err
    return profile_from_dict(data)


def output_path(source: Path, out_dir: Path) -> Path:
    """Where the normalized version of ``source`` goes: same stem, PNG suffix."""
    return Path(out_dir) / (Path(source).stem + ".png")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
