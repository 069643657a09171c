"""Shared fixtures: procedural cutouts, backgrounds, and synthetic scenes."""

from __future__ import annotations

import numpy as np
import pytest

from mpstack import edit
from mpstack.synth import Cutout, PlacementPolicy, SceneRecord, generate_scene


def make_blob_cutout(rng: np.random.Generator, height: int = 40, width: int = 32, source_id: str = "blob") -> Cutout:
    """Elliptical soft-edged blob with a smooth random color gradient."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy = height / 2 + rng.uniform(-height * 0.1, height * 0.1)
    cx = width / 2 + rng.uniform(-width * 0.1, width * 0.1)
    r = np.sqrt(((yy - cy) / (height * 0.38)) ** 2 + ((xx - cx) / (width * 0.38)) ** 2)
    alpha = np.clip(1.5 - r, 0.0, 1.0)

    corners = rng.uniform(0.05, 0.95, size=(2, 2, 3))
    ty, tx = yy / max(height - 1, 1), xx / max(width - 1, 1)
    color = (
        corners[0, 0] * ((1 - ty) * (1 - tx))[..., None]
        + corners[0, 1] * ((1 - ty) * tx)[..., None]
        + corners[1, 0] * (ty * (1 - tx))[..., None]
        + corners[1, 1] * (ty * tx)[..., None]
    )
    return Cutout(source_id=source_id, color=color, full_alpha=alpha)


def make_background(rng: np.random.Generator, height: int = 64, width: int = 80) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = rng.uniform(0.1, 0.9, size=3)
    tilt = rng.uniform(-0.3, 0.3, size=3)
    img = base[None, None, :] + tilt[None, None, :] * (xx / max(width - 1, 1) + yy / max(height - 1, 1))[..., None] / 2
    return np.clip(img, 0.0, 1.0)


def make_scene(
    seed: int,
    n_instances: int = 3,
    height: int = 64,
    width: int = 80,
    hard_core: bool = False,
    with_reorder_pair: bool = True,
) -> SceneRecord:
    rng = np.random.default_rng(seed)
    cutouts = [make_blob_cutout(rng, source_id=f"blob{i}") for i in range(n_instances)]
    background = make_background(rng, height, width)
    policy = PlacementPolicy(hard_core=hard_core)
    return generate_scene(cutouts, background, seed=seed, policy=policy, with_reorder_pair=with_reorder_pair)


def recomposite_without(record: SceneRecord, z_excluded: int) -> np.ndarray:
    """Oracle: over-composite the original full-extent layers, skipping one z slot."""
    from mpstack.synth import over_composite

    layers = [
        (layer.color, layer.full_alpha)
        for z, layer in enumerate(record.ordered_layers)
        if z != z_excluded
    ]
    return over_composite(layers, record.background)


@pytest.fixture(autouse=True)
def _reset_inpaint_provider():
    yield
    edit.register_inpaint_provider(None)


@pytest.fixture
def soft_scene() -> SceneRecord:
    return make_scene(seed=101, n_instances=3)


@pytest.fixture
def hard_scene() -> SceneRecord:
    return make_scene(seed=202, n_instances=4, hard_core=True)
