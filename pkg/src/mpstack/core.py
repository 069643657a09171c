"""Core layered-scene types: planes, depth-sorted stacks, and stack validation.

Pixel data is held in plain numpy arrays with fixed conventions:

* color images: ``(H, W, 3)`` float64, channel values in ``[0, 1]``
* alpha mattes: ``(H, W)`` float64 in ``[0, 1]``
* footprints:  ``(H, W)`` bool, marking pixels where a plane has known content
* depth maps:  ``(H, W)`` float64, strictly positive and finite

All arrays stored on a :class:`Plane` are read-only; operations are pure and
return new objects, so stacks can be shared across threads without locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInstance, UnknownPlane

BACKGROUND_DEPTH = math.inf

BACKGROUND_ID = "bg"


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


def as_color(pixels) -> np.ndarray:
    """Coerce to a read-only (H, W, 3) float64 color array."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"color array must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("color array must be at least 1x1")
    return _readonly(arr)


def as_alpha(values) -> np.ndarray:
    """Coerce to a read-only (H, W) float64 alpha matte."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"alpha matte must be 2-D, got shape {arr.shape}")
    return _readonly(arr)


def as_mask(values) -> np.ndarray:
    """Coerce to a read-only (H, W) boolean footprint mask."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        arr = arr > 0
    return _readonly(np.ascontiguousarray(arr))


def as_depth_map(values) -> np.ndarray:
    """Coerce to a read-only (H, W) float64 depth map; values must be positive and finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("depth map values must be strictly positive and finite")
    return _readonly(arr)


class PlaneKind(str, Enum):
    BACKGROUND = "background"
    INSTANCE = "instance"


@dataclass(frozen=True)
class Plane:
    """One layer of a scene stack.

    ``color`` is full-extent (it keeps content even where the plane is
    occluded), ``alpha`` is the plane's visible opacity in the composed
    scene, and ``footprint`` marks where the plane has known content.
    The background plane sits at infinite depth and covers every pixel.
    """

    plane_id: str
    kind: PlaneKind
    color: np.ndarray
    alpha: np.ndarray
    footprint: np.ndarray
    mean_depth: float

    def __post_init__(self):
        object.__setattr__(self, "color", as_color(self.color))
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        object.__setattr__(self, "footprint", as_mask(self.footprint))
        h, w = self.alpha.shape
        if self.color.shape[:2] != (h, w) or self.footprint.shape != (h, w):
            raise ValueError(
                f"plane '{self.plane_id}': color {self.color.shape[:2]}, "
                f"alpha {self.alpha.shape} and footprint {self.footprint.shape} disagree"
            )
        if self.kind is PlaneKind.BACKGROUND:
            if not math.isinf(self.mean_depth):
                raise ValueError("background plane must sit at infinite depth")
        elif not math.isfinite(self.mean_depth):
            raise ValueError(f"instance plane '{self.plane_id}' needs a finite mean depth")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.alpha.shape

    @property
    def is_background(self) -> bool:
        return self.kind is PlaneKind.BACKGROUND

    @cached_property
    def footprint_bbox(self) -> tuple[int, int, int, int] | None:
        """(row0, row1, col0, col1) inclusive bounds of the footprint, or None if empty."""
        rows = np.flatnonzero(self.footprint.any(axis=1))
        if rows.size == 0:
            return None
        cols = np.flatnonzero(self.footprint.any(axis=0))
        return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])

    def with_alpha(self, alpha: np.ndarray) -> "Plane":
        return replace(self, alpha=alpha)

    def with_mean_depth(self, depth: float) -> "Plane":
        return replace(self, mean_depth=depth)


def background_plane(color, alpha, plane_id: str = BACKGROUND_ID) -> Plane:
    """Build a background plane: infinite depth, full footprint."""
    color = as_color(color)
    return Plane(
        plane_id=plane_id,
        kind=PlaneKind.BACKGROUND,
        color=color,
        alpha=alpha,
        footprint=np.ones(color.shape[:2], dtype=bool),
        mean_depth=BACKGROUND_DEPTH,
    )


@dataclass(frozen=True)
class SceneStack:
    """Depth-ordered list of planes; index 0 is closest to the camera.

    Construction requires a uniform resolution and exactly one background
    plane. Ordering (background last, non-decreasing depth) is what
    :func:`sort_by_depth` establishes and :func:`validate_stack` reports on;
    it is not re-enforced here so that broken stacks can be inspected.
    """

    planes: tuple[Plane, ...]

    def __post_init__(self):
        planes = tuple(self.planes)
        object.__setattr__(self, "planes", planes)
        if not planes:
            raise ValueError("a scene stack needs at least a background plane")
        res = planes[0].resolution
        for p in planes:
            if p.resolution != res:
                raise ValueError(f"plane '{p.plane_id}' resolution {p.resolution} != {res}")
        n_background = sum(p.is_background for p in planes)
        if n_background != 1:
            raise ValueError(f"a scene stack needs exactly one background plane, got {n_background}")
        ids = [p.plane_id for p in planes]
        if len(set(ids)) != len(ids):
            raise ValueError("plane ids must be unique")

    def __len__(self) -> int:
        return len(self.planes)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.planes[0].resolution

    @property
    def background(self) -> Plane:
        return next(p for p in self.planes if p.is_background)

    @property
    def instances(self) -> tuple[Plane, ...]:
        return tuple(p for p in self.planes if not p.is_background)

    def index_of(self, plane_id: str) -> int:
        for i, p in enumerate(self.planes):
            if p.plane_id == plane_id:
                return i
        raise UnknownPlane(f"no plane with id '{plane_id}'")

    def plane(self, plane_id: str) -> Plane:
        return self.planes[self.index_of(plane_id)]

    def alpha_sum(self) -> np.ndarray:
        """Per-pixel sum of visible alphas over all planes."""
        total = np.zeros(self.resolution, dtype=np.float64)
        for p in self.planes:
            total += p.alpha
        return total


def plane_mean_depth(alpha, depth, background: bool = False) -> float:
    """Mean scene depth over the pixels where the plane is visible.

    The background is pinned at infinite depth regardless of pixels.
    Raises :class:`EmptyInstance` for a non-background plane whose alpha
    support is empty.
    """
    if background:
        return BACKGROUND_DEPTH
    alpha = np.asarray(alpha, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if alpha.shape != depth.shape:
        raise ValueError(f"alpha {alpha.shape} and depth {depth.shape} resolutions differ")
    support = alpha > 0
    if not support.any():
        raise EmptyInstance("plane has no pixels with positive alpha")
    return float(depth[support].mean())


def sort_by_depth(stack: SceneStack) -> SceneStack:
    """Return the stack ordered by ascending mean depth, background last.

    The sort is stable: planes with equal depth keep their input order.
    """
    order = sorted(range(len(stack.planes)), key=lambda i: stack.planes[i].mean_depth)
    return SceneStack(planes=tuple(stack.planes[i] for i in order))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    max_alpha_sum_error: float
    footprint_violations: int

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"[{'ok' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "") for c in self.checks]
        return "\n".join(lines)


def validate_stack(stack: SceneStack, tolerance: float = 1e-6) -> ValidationReport:
    """Report-only check of stack invariants.

    Checks value ranges, footprint containment of alpha support, background
    placement, depth ordering, and the per-pixel alpha sum (== 1 within
    ``tolerance`` for ground-truth-constructed stacks).
    """
    checks: list[CheckResult] = []

    bad_color = [p.plane_id for p in stack.planes if p.color.min() < 0 or p.color.max() > 1]
    checks.append(CheckResult("color_range", not bad_color, f"out of [0,1] on {bad_color}" if bad_color else ""))

    bad_alpha = [p.plane_id for p in stack.planes if p.alpha.min() < 0 or p.alpha.max() > 1]
    checks.append(CheckResult("alpha_range", not bad_alpha, f"out of [0,1] on {bad_alpha}" if bad_alpha else ""))

    violations = 0
    for p in stack.planes:
        violations += int(np.count_nonzero((p.alpha > 0) & ~p.footprint))
    checks.append(
        CheckResult("footprint_containment", violations == 0, f"{violations} pixels with alpha outside footprint" if violations else "")
    )

    bg = stack.background
    bg_ok = stack.planes[-1].is_background and bool(bg.footprint.all())
    checks.append(CheckResult("background_plane", bg_ok, "" if bg_ok else "background must be last and cover every pixel"))

    depths = [p.mean_depth for p in stack.planes]
    ordered = all(a <= b for a, b in zip(depths, depths[1:]))
    checks.append(CheckResult("depth_order", ordered, "" if ordered else f"depths not non-decreasing: {depths}"))

    err = float(np.abs(stack.alpha_sum() - 1.0).max())
    checks.append(
        CheckResult("alpha_sum", err <= tolerance, f"max |sum(alpha) - 1| = {err:.3g} (tolerance {tolerance:g})")
    )

    return ValidationReport(checks=tuple(checks), max_alpha_sum_error=err, footprint_violations=violations)
