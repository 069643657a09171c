"""Depth-driven scene splitting into N soft planes.

Given a depth map, pick N representative plane depths (quantile midpoints
by default), refine them with 1-D k-means, and assign every pixel softly to
the planes with a temperature-controlled softmax over depth proximity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_depth_map
from .errors import ConstantDepth

DEFAULT_PLANE_COUNT = 10
DEFAULT_MAX_ITERS = 20


@dataclass(frozen=True)
class PlaneDepths:
    """Initial and (optionally) refined plane depths, strictly increasing."""

    initial: tuple[float, ...]
    refined: tuple[float, ...] | None = None
    objective_history: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("initial", "refined"):
            values = getattr(self, name)
            if values is None:
                continue
            values = tuple(float(v) for v in values)
            object.__setattr__(self, name, values)
            if len(values) < 2:
                raise ValueError(f"{name} depths need at least 2 planes, got {len(values)}")
            if any(a >= b for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} depths must be strictly increasing: {values}")

    @property
    def n(self) -> int:
        return len(self.initial)

    @property
    def values(self) -> tuple[float, ...]:
        """Refined depths when available, else the initial ones."""
        return self.refined if self.refined is not None else self.initial


def _force_strictly_increasing(values: np.ndarray, lo: float, hi: float, eps: float) -> np.ndarray:
    """Sort and nudge duplicates apart by eps while staying inside [lo, hi]."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if (n - 1) * eps >= (hi - lo):
        raise ValueError(f"cannot fit {n} strictly increasing depths into [{lo}, {hi}] with eps {eps}")
    for i in range(1, n):
        if v[i] <= v[i - 1]:
            v[i] = v[i - 1] + eps
    if v[-1] > hi:
        v[-1] = hi
        for i in range(n - 2, -1, -1):
            if v[i] >= v[i + 1]:
                v[i] = v[i + 1] - eps
    return v


def initial_plane_depths(depth, n: int = DEFAULT_PLANE_COUNT, spacing: str = "quantile") -> PlaneDepths:
    """Pick N initial plane depths from the depth map.

    ``quantile`` spacing (the default) takes the midpoints of N
    equal-population bins of the depth histogram, i.e. the (k + 0.5)/N
    quantiles, so no plane starts starved of pixels. ``linear`` spacing
    takes midpoints of N equal-width bins over [min, max] instead.

    Raises :class:`ConstantDepth` when the map has no depth variation.
    """
    if n < 2:
        raise ValueError(f"need at least 2 planes, got {n}")
    if spacing not in ("quantile", "linear"):
        raise ValueError(f"spacing must be 'quantile' or 'linear', got {spacing!r}")
    depth = as_depth_map(depth)
    dmin, dmax = float(depth.min()), float(depth.max())
    if dmax <= dmin:
        raise ConstantDepth(f"depth map is constant at {dmin}; cannot split into planes")

    positions = (np.arange(n) + 0.5) / n
    if spacing == "quantile":
        values = np.quantile(depth, positions)
    else:
        values = dmin + positions * (dmax - dmin)

    eps = 1e-6 * (dmax - dmin)
    values = _force_strictly_increasing(values, dmin, dmax, eps)
    return PlaneDepths(initial=tuple(values))


def _quantization_objective(data: np.ndarray, centers: np.ndarray) -> float:
    boundaries = (centers[:-1] + centers[1:]) / 2.0
    idx = np.searchsorted(boundaries, data)
    return float(np.sum((data - centers[idx]) ** 2))


def refine_plane_depths(depth, depths: PlaneDepths, max_iters: int = DEFAULT_MAX_ITERS) -> PlaneDepths:
    """Refine plane depths with 1-D k-means (Lloyd iterations).

    Each pixel is hard-assigned to the nearest plane depth, each depth is
    recentered at the mean of its pixels (empty planes keep their previous
    depth), until the largest depth move drops below 1e-4 of the depth range
    or ``max_iters`` is hit. The recorded ``objective_history`` holds the
    quantization objective before refinement and after every iteration; it
    is non-increasing.
    """
    depth = as_depth_map(depth)
    data = depth.ravel()
    dmin, dmax = float(data.min()), float(data.max())
    centers = np.asarray(depths.values, dtype=np.float64)
    n = len(centers)
    tol = 1e-4 * (dmax - dmin)

    history = [_quantization_objective(data, centers)]
    for _ in range(max_iters):
        boundaries = (centers[:-1] + centers[1:]) / 2.0
        idx = np.searchsorted(boundaries, data)
        counts = np.bincount(idx, minlength=n)
        sums = np.bincount(idx, weights=data, minlength=n)
        new_centers = centers.copy()
        occupied = counts > 0
        new_centers[occupied] = sums[occupied] / counts[occupied]
        new_centers = np.sort(new_centers)
        shift = float(np.abs(new_centers - centers).max())
        centers = new_centers
        history.append(_quantization_objective(data, centers))
        if shift < tol:
            break

    eps = 1e-6 * (dmax - dmin)
    centers = _force_strictly_increasing(centers, dmin, dmax, eps)
    return PlaneDepths(
        initial=depths.initial,
        refined=tuple(centers),
        objective_history=tuple(history),
    )


def default_tau(depth, n: int) -> float:
    """Default softmax temperature: (depth range) / (4 N)."""
    depth = np.asarray(depth, dtype=np.float64)
    return float((depth.max() - depth.min()) / (4.0 * n))


def plane_masks(depth, depths: PlaneDepths, tau: float | None = None) -> np.ndarray:
    """Soft per-pixel assignment of the scene to the planes.

    Returns an (N, H, W) array where mask i at a pixel is the softmax over
    planes of -|depth - plane_depth_i| / tau. Masks sum to 1 at every pixel
    and their per-pixel argmax is the nearest-plane hard assignment.
    """
    depth = as_depth_map(depth)
    centers = np.asarray(depths.values, dtype=np.float64)
    if tau is None:
        tau = default_tau(depth, len(centers))
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")

    scores = -np.abs(depth[None, :, :] - centers[:, None, None]) / tau
    scores -= scores.max(axis=0, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=0, keepdims=True)
