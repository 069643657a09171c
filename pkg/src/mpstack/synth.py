"""Synthetic layered-scene generator.

Composes instance cutouts over a background in a seeded random z-order and
keeps the full ground truth around: per-layer full and visible alphas,
footprints, the composite, and optionally the composite with two instances'
overlay order exchanged. Scenes built here satisfy the stack invariants
exactly (per-pixel visible alphas sum to 1), which is what makes them
usable as oracles for the editing operations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .core import (
    Plane,
    PlaneKind,
    SceneStack,
    as_alpha,
    as_color,
    background_plane,
)
from .errors import EmptyInstance, InvalidTarget, PlacementFailure
from . import imgio


@dataclass(frozen=True)
class Cutout:
    """An instance cutout: color plus its pre-occlusion (full) alpha."""

    source_id: str
    color: np.ndarray
    full_alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "color", as_color(self.color))
        object.__setattr__(self, "full_alpha", as_alpha(self.full_alpha))
        if self.color.shape[:2] != self.full_alpha.shape:
            raise ValueError("cutout color and alpha resolutions differ")
        if self.full_alpha.min() < 0 or self.full_alpha.max() > 1:
            raise ValueError("cutout alpha values must lie in [0, 1]")
        if not (self.full_alpha > 0).any():
            raise EmptyInstance(f"cutout '{self.source_id}' has empty alpha support")


@dataclass(frozen=True)
class PlacementPolicy:
    """Random placement parameters for scene synthesis.

    Instance height is scaled to a uniform fraction of the frame height;
    positions are uniform subject to at least ``min_inside_frac`` of the
    scaled width and height staying inside the frame. ``hard_core``
    binarizes placed alphas (except within ``soft_band_px`` of the
    boundary), which makes edit oracles exact.
    """

    height_frac: tuple[float, float] = (0.3, 0.9)
    min_inside_frac: float = 0.7
    scale_floor: float | None = None
    min_instances: int = 2
    max_instances: int = 6
    hard_core: bool = False
    soft_band_px: int = 0


@dataclass(frozen=True)
class PlacedLayer:
    """A cutout placed at scene resolution: full-extent color, alpha, footprint."""

    source_id: str
    color: np.ndarray
    full_alpha: np.ndarray
    footprint: np.ndarray


@dataclass(frozen=True)
class SceneRecord:
    """Everything known about one synthesized scene."""

    stack: SceneStack
    composite: np.ndarray
    layers: tuple[PlacedLayer, ...]
    background: np.ndarray
    order: tuple[int, ...]
    seed: int | None = None
    reorder_pair: tuple[int, int] | None = None
    swapped_composite: np.ndarray | None = None

    @property
    def ordered_layers(self) -> tuple[PlacedLayer, ...]:
        """Placed layers rearranged front (index 0) to back."""
        return tuple(self.layers[i] for i in self.order)


def _scale_cutout(cutout: Cutout, scale: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = cutout.full_alpha.shape
    sw, sh = max(1, round(w * scale)), max(1, round(h * scale))
    if (sw, sh) == (w, h):
        return cutout.color.copy(), cutout.full_alpha.copy()
    alpha = cv2.resize(cutout.full_alpha, (sw, sh), interpolation=cv2.INTER_LINEAR)
    # resample premultiplied color so transparent zero-pixels do not bleed in
    premult = cutout.color * cutout.full_alpha[:, :, None]
    color = cv2.resize(premult, (sw, sh), interpolation=cv2.INTER_LINEAR)
    np.clip(alpha, 0.0, 1.0, out=alpha)
    covered = alpha > 1e-8
    color[covered] /= alpha[covered, None]
    color[~covered] = 0.0
    np.clip(color, 0.0, 1.0, out=color)
    return color, alpha


def _binarize(alpha: np.ndarray, soft_band_px: int) -> np.ndarray:
    hard = (alpha >= 0.5).astype(np.float64)
    if soft_band_px <= 0:
        return hard
    mask = (hard > 0).astype(np.uint8)
    kernel = np.ones((2 * soft_band_px + 1,) * 2, dtype=np.uint8)
    band = cv2.dilate(mask, kernel).astype(bool) & ~cv2.erode(mask, kernel).astype(bool)
    out = hard
    out[band] = alpha[band]
    return out


def _offset_range(frame: int, size: int, inside_frac: float) -> tuple[int, int]:
    lo = -int(np.floor((1.0 - inside_frac) * size))
    hi = int(np.floor(frame - inside_frac * size))
    return lo, hi


def place_instances(
    cutouts: list[Cutout] | tuple[Cutout, ...],
    background: np.ndarray,
    seed: int | None,
    policy: PlacementPolicy = PlacementPolicy(),
) -> tuple[tuple[PlacedLayer, ...], tuple[int, ...]]:
    """Place each cutout at scene resolution and draw a random z-order.

    Returns the placed layers (in input order) and the z-order: a seeded
    random permutation where ``order[0]`` indexes the frontmost layer.
    Deterministic given the seed. Raises :class:`PlacementFailure` when a
    cutout cannot satisfy the inside-the-frame constraint (only possible
    with a ``scale_floor``).
    """
    if len(cutouts) < 1:
        raise ValueError("need at least one cutout")
    background = as_color(background)
    frame_h, frame_w = background.shape[:2]
    rng = np.random.default_rng(seed)

    layers = []
    for cutout in cutouts:
        h, w = cutout.full_alpha.shape
        scale = rng.uniform(*policy.height_frac) * frame_h / h
        if policy.scale_floor is not None:
            scale = max(scale, policy.scale_floor)
        # the inside-the-frame constraint is satisfiable up to this scale
        if policy.min_inside_frac > 0:
            feasible = min(frame_w / (policy.min_inside_frac * w), frame_h / (policy.min_inside_frac * h))
        else:
            feasible = float("inf")
        if scale > feasible:
            if policy.scale_floor is not None and policy.scale_floor > feasible:
                raise PlacementFailure(
                    f"cutout '{cutout.source_id}' cannot keep {policy.min_inside_frac:.0%} "
                    f"of its footprint inside a {frame_w}x{frame_h} frame at scale >= {policy.scale_floor}"
                )
            scale = feasible * 0.999

        color, alpha = _scale_cutout(cutout, scale)
        sh, sw = alpha.shape
        x_lo, x_hi = _offset_range(frame_w, sw, policy.min_inside_frac)
        y_lo, y_hi = _offset_range(frame_h, sh, policy.min_inside_frac)
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))

        scene_color = np.zeros((frame_h, frame_w, 3), dtype=np.float64)
        scene_alpha = np.zeros((frame_h, frame_w), dtype=np.float64)
        src_y0, src_x0 = max(0, -y0), max(0, -x0)
        dst_y0, dst_x0 = max(0, y0), max(0, x0)
        copy_h = min(sh - src_y0, frame_h - dst_y0)
        copy_w = min(sw - src_x0, frame_w - dst_x0)
        if copy_h <= 0 or copy_w <= 0:
            raise PlacementFailure(f"cutout '{cutout.source_id}' landed fully outside the frame")
        scene_color[dst_y0:dst_y0 + copy_h, dst_x0:dst_x0 + copy_w] = color[src_y0:src_y0 + copy_h, src_x0:src_x0 + copy_w]
        scene_alpha[dst_y0:dst_y0 + copy_h, dst_x0:dst_x0 + copy_w] = alpha[src_y0:src_y0 + copy_h, src_x0:src_x0 + copy_w]

        if policy.hard_core:
            scene_alpha = _binarize(scene_alpha, policy.soft_band_px)
        if not (scene_alpha > 0).any():
            raise PlacementFailure(f"cutout '{cutout.source_id}' has no visible pixels after placement")

        layers.append(
            PlacedLayer(
                source_id=cutout.source_id,
                color=scene_color,
                full_alpha=scene_alpha,
                footprint=scene_alpha > 0,
            )
        )

    order = tuple(int(i) for i in rng.permutation(len(cutouts)))
    return tuple(layers), order


def visible_alphas(full_alphas: list[np.ndarray] | tuple[np.ndarray, ...]) -> list[np.ndarray]:
    """Per-layer visibility under front-to-back occlusion.

    Input is ordered front (index 0) to back. Layer i keeps
    full_alpha_i * prod_{j<i} (1 - full_alpha_j); the returned list carries
    the leftover background visibility as its last element, so it sums to 1
    at every pixel.
    """
    full_alphas = [np.asarray(a, dtype=np.float64) for a in full_alphas]
    out = []
    transmittance = None
    for alpha in full_alphas:
        if transmittance is None:
            transmittance = np.ones_like(alpha)
        out.append(alpha * transmittance)
        transmittance = transmittance * (1.0 - alpha)
    if transmittance is None:
        raise ValueError("need at least one alpha matte")
    out.append(transmittance)
    return out


def over_composite(
    layers_front_to_back: list[tuple[np.ndarray, np.ndarray]],
    background: np.ndarray,
) -> np.ndarray:
    """Straight-alpha over-compositing of (color, alpha) layers onto a background."""
    image = np.asarray(background, dtype=np.float64).copy()
    for color, alpha in reversed(layers_front_to_back):
        a = np.asarray(alpha, dtype=np.float64)[:, :, None]
        image = np.asarray(color, dtype=np.float64) * a + (1.0 - a) * image
    return image


def compose_scene(
    layers: tuple[PlacedLayer, ...],
    background: np.ndarray,
    order: tuple[int, ...],
) -> tuple[SceneStack, np.ndarray]:
    """Build the ground-truth stack and composite for a placed scene.

    Depths are assigned from the overlay order (front gets 1 + z, background
    infinity) so depth sorting reproduces the overlay order exactly.
    """
    if sorted(order) != list(range(len(layers))):
        raise ValueError(f"order must be a permutation of 0..{len(layers) - 1}, got {order}")
    background = as_color(background)
    ordered = [layers[i] for i in order]
    if not ordered:
        stack = SceneStack(planes=(background_plane(background, np.ones(background.shape[:2])),))
        return stack, background.copy()
    vis = visible_alphas([layer.full_alpha for layer in ordered])

    planes = [
        Plane(
            plane_id=f"i{z}",
            kind=PlaneKind.INSTANCE,
            color=layer.color,
            alpha=vis[z],
            footprint=layer.footprint,
            mean_depth=float(1 + z),
        )
        for z, layer in enumerate(ordered)
    ]
    planes.append(background_plane(background, vis[-1]))
    composite = over_composite([(layer.color, layer.full_alpha) for layer in ordered], background)
    return SceneStack(planes=tuple(planes)), composite


def swap_order(order: tuple[int, ...], p: int, q: int) -> tuple[int, ...]:
    """Exchange the overlay positions p and q of a z-order."""
    swapped = list(order)
    swapped[p], swapped[q] = swapped[q], swapped[p]
    return tuple(swapped)


def make_reorder_pair(
    layers: tuple[PlacedLayer, ...],
    background: np.ndarray,
    order: tuple[int, ...],
    p: int,
    q: int,
    seed: int | None = None,
) -> SceneRecord:
    """Build a scene record carrying both the composite and the composite
    with instances at overlay positions p and q exchanged.

    p and q are z positions (0 = frontmost instance); the background is not
    addressable and out-of-range positions raise :class:`InvalidTarget`.
    """
    n = len(layers)
    for z in (p, q):
        if not (0 <= z < n):
            raise InvalidTarget(f"z position {z} does not address an instance (0..{n - 1})")
    if p == q:
        raise InvalidTarget("reorder positions must differ")

    stack, composite = compose_scene(layers, background, order)
    swapped = swap_order(order, p, q)
    ordered_swapped = [layers[i] for i in swapped]
    swapped_composite = over_composite(
        [(layer.color, layer.full_alpha) for layer in ordered_swapped], background
    )
    return SceneRecord(
        stack=stack,
        composite=composite,
        layers=tuple(layers),
        background=as_color(background),
        order=order,
        seed=seed,
        reorder_pair=(min(p, q), max(p, q)),
        swapped_composite=swapped_composite,
    )


def generate_scene(
    cutouts: list[Cutout] | tuple[Cutout, ...],
    background: np.ndarray,
    seed: int | None,
    policy: PlacementPolicy = PlacementPolicy(),
    with_reorder_pair: bool = True,
) -> SceneRecord:
    """Place cutouts, compose the scene, and (optionally) pick a reorder pair."""
    layers, order = place_instances(cutouts, background, seed, policy)
    if with_reorder_pair and len(layers) >= 2:
        rng = np.random.default_rng(None if seed is None else seed + 0x5EED)
        p, q = sorted(int(v) for v in rng.choice(len(layers), size=2, replace=False))
        return make_reorder_pair(layers, background, order, p, q, seed=seed)
    stack, composite = compose_scene(layers, background, order)
    return SceneRecord(
        stack=stack,
        composite=composite,
        layers=tuple(layers),
        background=as_color(background),
        order=order,
        seed=seed,
    )


def write_scene_record(record: SceneRecord, out_dir) -> Path:
    """Serialize a scene record as a manifest bundle; returns the manifest path."""
    full_alphas = {f"i{z}": layer.full_alpha for z, layer in enumerate(record.ordered_layers)}
    return imgio.write_stack_bundle(
        record.stack,
        out_dir,
        seed=record.seed,
        composite=record.composite,
        full_alphas=full_alphas,
        reorder_pair=record.reorder_pair,
        swapped_composite=record.swapped_composite,
    )


def load_cutout(path) -> Cutout:
    """Load an RGBA PNG as a cutout; alpha comes from the A channel."""
    from PIL import Image as PILImage

    path = Path(path)
    with PILImage.open(path) as im:
        rgba = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
    return Cutout(source_id=path.stem, color=rgba[:, :, :3], full_alpha=rgba[:, :, 3])


def generate_dataset(
    cutouts: list[Cutout],
    backgrounds: list[np.ndarray],
    count: int,
    seed: int,
    out_dir,
    policy: PlacementPolicy = PlacementPolicy(),
    split_ratio: tuple[int, int, int] = (3, 1, 1),
) -> list[Path]:
    """Generate ``count`` scene bundles under out_dir/{train,val,test}.

    Scenes draw per-scene seeds from one root seed, so the whole dataset is
    reproducible bit-for-bit. Split assignment cycles train/val/test at the
    given ratio.
    """
    if not cutouts or not backgrounds:
        raise ValueError("need at least one cutout and one background")
    out_dir = Path(out_dir)
    root = np.random.SeedSequence(seed)
    scene_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(count)]

    total = sum(split_ratio)
    names = ["train"] * split_ratio[0] + ["val"] * split_ratio[1] + ["test"] * split_ratio[2]
    manifests = []
    for i in range(count):
        scene_seed = scene_seeds[i]
        rng = np.random.default_rng(scene_seed)
        n_inst = int(rng.integers(policy.min_instances, policy.max_instances + 1))
        picks = [cutouts[int(j)] for j in rng.choice(len(cutouts), size=n_inst, replace=True)]
        picks = [replace(c, source_id=f"{c.source_id}#{k}") for k, c in enumerate(picks)]
        bg = backgrounds[int(rng.integers(0, len(backgrounds)))]
        record = generate_scene(picks, bg, seed=scene_seed, policy=policy)
        split = names[i % total]
        manifests.append(write_scene_record(record, out_dir / split / f"scene_{i:05d}"))
    return manifests
