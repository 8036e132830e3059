import numpy as np
import pytest

from multimacenko.synth import SynthSpec, random_stain_matrix, rotate_stain_basis, synthesize


def synth_image(seed, v=None, size=128, **kwargs):
    v = random_stain_matrix(seed) if v is None else v
    image, _ = synthesize(SynthSpec(v, width=size, height=size, rng_seed=seed, **kwargs))
    return image


def rotatable_stain_matrix(start, degrees=(-20, -10, 10, 20)):
    """First fixture matrix from ``start`` onward whose in-plane rotations stay non-negative."""
    seed = start
    while True:
        v = random_stain_matrix(seed)
        if all(rotate_stain_basis(v, None, np.radians(d)).min() > 0.02 for d in degrees):
            return seed, v
        seed += 1


@pytest.fixture
def white_image():
    return np.full((64, 64, 3), 255, dtype=np.uint8)


@pytest.fixture
def gray_ramp_image():
    # equal channels: every OD pixel lies on the gray ray, a rank-one cloud
    vals = np.linspace(20, 200, 64 * 64).astype(np.uint8).reshape(64, 64)
    return np.stack([vals] * 3, axis=-1)


@pytest.fixture(scope="session")
def image_a():
    return synth_image(11)


@pytest.fixture(scope="session")
def three_refs():
    return [synth_image(s) for s in (21, 22, 23)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
