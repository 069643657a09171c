"""Editing operations on a scene stack: render, remove, reorder, drag.

All operations are pure stack-to-stack (or stack-to-image) transforms.
Removal reassigns the removed plane's visible alpha to the closest covering
plane behind it, reordering exchanges visible alphas between adjacent
planes on their footprint intersections, so both conserve the per-pixel
alpha sum exactly. On scenes whose alphas are binary wherever footprints
intersect, both reproduce a from-scratch recomposite pixel-exactly; for
fractional alphas the swap rule is an approximation whose deviation callers
can measure against a recomposite oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import cv2
import numpy as np

from .core import Plane, PlaneKind, SceneStack
from .errors import (
    EmptyInstance,
    InpaintUnavailable,
    InvalidTarget,
    OrderViolation,
    PlacementFailure,
    UnknownPlane,
)

# resampled alpha below this is treated as empty, so footprints do not bleed
ALPHA_FOOTPRINT_THRESHOLD = 1e-4


def render(stack: SceneStack) -> np.ndarray:
    """Composite the stack: per pixel and channel, sum of color * alpha.

    The result is clamped to [0, 1]; ground-truth stacks never need the
    clamp, imported non-normalized data might.
    """
    h, w = stack.resolution
    out = np.zeros((h, w, 3), dtype=np.float64)
    for plane in stack.planes:
        out += plane.color * plane.alpha[:, :, None]
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _bbox_intersection(a: Plane, b: Plane):
    ba, bb = a.footprint_bbox, b.footprint_bbox
    if ba is None or bb is None:
        return None
    r0, r1 = max(ba[0], bb[0]), min(ba[1], bb[1])
    c0, c1 = max(ba[2], bb[2]), min(ba[3], bb[3])
    if r0 > r1 or c0 > c1:
        return None
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def remove_instance(stack: SceneStack, plane_id: str) -> SceneStack:
    """Drop an instance plane, handing its visible alpha to what's behind it.

    For every pixel where the removed plane is visible, the closest plane
    strictly behind it (in stack order) whose footprint covers the pixel
    receives the alpha; the background, which covers everything, is the
    fallback. The per-pixel alpha sum is conserved exactly.
    """
    j = stack.index_of(plane_id)
    removed = stack.planes[j]
    if removed.is_background:
        raise InvalidTarget("the background plane cannot be removed")

    survivors = list(stack.planes[:j] + stack.planes[j + 1:])
    omega = removed.alpha > 0
    rows = np.flatnonzero(omega.any(axis=1))
    if rows.size:
        cols = np.flatnonzero(omega.any(axis=0))
        win = (slice(int(rows[0]), int(rows[-1]) + 1), slice(int(cols[0]), int(cols[-1]) + 1))
        remaining = omega[win].copy()
        alpha_j = removed.alpha[win]
        for k in range(j, len(survivors)):
            plane = survivors[k]
            take = remaining & plane.footprint[win]
            if not take.any():
                continue
            new_alpha = plane.alpha.copy()
            view = new_alpha[win]
            view[take] += alpha_j[take]
            survivors[k] = plane.with_alpha(new_alpha)
            remaining &= ~take
            if not remaining.any():
                break
    return SceneStack(planes=tuple(survivors))


def _exchange_on_intersection(a: Plane, b: Plane, work: dict[str, np.ndarray]) -> None:
    """Swap visible alphas of a and b where both footprints cover, in-place
    on working copies held in ``work``."""
    win = _bbox_intersection(a, b)
    if win is None:
        return
    inter = a.footprint[win] & b.footprint[win]
    if not inter.any():
        return
    for plane in (a, b):
        if plane.plane_id not in work:
            work[plane.plane_id] = plane.alpha.copy()
    va = work[a.plane_id][win]
    vb = work[b.plane_id][win]
    tmp = va[inter]
    va[inter] = vb[inter]
    vb[inter] = tmp


def swap_planes(stack: SceneStack, plane_id1: str, plane_id2: str) -> SceneStack:
    """Exchange two instance planes: alphas on their footprint intersection,
    plus their stack positions and mean depths (so the depth order is kept)."""
    i1, i2 = stack.index_of(plane_id1), stack.index_of(plane_id2)
    if i1 == i2:
        raise InvalidTarget("swap targets must differ")
    a, b = stack.planes[i1], stack.planes[i2]
    if a.is_background or b.is_background:
        raise InvalidTarget("the background plane cannot be swapped")

    work: dict[str, np.ndarray] = {}
    _exchange_on_intersection(a, b, work)
    planes = list(stack.planes)
    planes[i1] = replace(b, alpha=work.get(b.plane_id, b.alpha), mean_depth=a.mean_depth)
    planes[i2] = replace(a, alpha=work.get(a.plane_id, a.alpha), mean_depth=b.mean_depth)
    return SceneStack(planes=tuple(planes))


def reorder(stack: SceneStack, p_id: str, q_id: str) -> SceneStack:
    """Exchange the occlusion order of instances p (front) and q (behind).

    Runs the adjacent-swap chain: p is swapped back past every plane up to
    q's slot, then q is swapped forward to p's old slot, leaving the order
    {..., q, p+1, ..., q-1, p, ...}. Each swap exchanges visible alphas on
    the pair's footprint intersection; slots keep their mean depths.
    Raises :class:`OrderViolation` when p is behind q (flip the arguments).
    """
    ip, iq = stack.index_of(p_id), stack.index_of(q_id)
    if ip == iq:
        raise InvalidTarget("reorder targets must differ")
    p, q = stack.planes[ip], stack.planes[iq]
    if p.is_background or q.is_background:
        raise InvalidTarget("the background plane cannot be reordered")
    if ip > iq:
        raise OrderViolation(f"plane '{p_id}' is behind '{q_id}'; flip the arguments")

    planes = list(stack.planes)
    slot_depths = [plane.mean_depth for plane in planes]
    work: dict[str, np.ndarray] = {}

    def swap_adjacent(k: int) -> None:
        a, b = planes[k], planes[k + 1]
        _exchange_on_intersection(a, b, work)
        planes[k], planes[k + 1] = b, a

    for k in range(ip, iq):
        swap_adjacent(k)
    for k in range(iq - 1, ip, -1):
        swap_adjacent(k - 1)

    rebuilt = []
    for slot, plane in enumerate(planes):
        changes = {}
        if plane.plane_id in work:
            changes["alpha"] = work[plane.plane_id]
        if plane.mean_depth != slot_depths[slot]:
            changes["mean_depth"] = slot_depths[slot]
        rebuilt.append(replace(plane, **changes) if changes else plane)
    return SceneStack(planes=tuple(rebuilt))


# ---------------------------------------------------------------------------
# dragging

@dataclass(frozen=True)
class Transform2D:
    """Rescale/rotate/translate applied to a dragged instance."""

    translation: tuple[float, float] = (0.0, 0.0)  # (dx, dy) in pixels
    scale: float = 1.0
    rotation_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.scale <= 8.0):
            raise ValueError(f"scale must be in (0, 8], got {self.scale}")

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.rotation_deg == 0.0 and self.translation == (0.0, 0.0)


@dataclass(frozen=True)
class CroppedInstance:
    """A plane's content restricted to the tight bounding box of its alpha
    support, with the box offset recorded."""

    plane_id: str
    color: np.ndarray
    alpha: np.ndarray
    footprint: np.ndarray
    row0: int
    col0: int

    @property
    def position(self) -> tuple[float, float]:
        """(x, y) top-left of the crop in its source frame."""
        return (float(self.col0), float(self.row0))


def crop_instance(plane: Plane) -> CroppedInstance:
    """Restrict a plane to the minimal rectangle containing its alpha support."""
    support = plane.alpha > 0
    rows = np.flatnonzero(support.any(axis=1))
    if rows.size == 0:
        raise EmptyInstance(f"plane '{plane.plane_id}' has empty alpha support")
    cols = np.flatnonzero(support.any(axis=0))
    win = (slice(int(rows[0]), int(rows[-1]) + 1), slice(int(cols[0]), int(cols[-1]) + 1))
    return CroppedInstance(
        plane_id=plane.plane_id,
        color=plane.color[win].copy(),
        alpha=plane.alpha[win].copy(),
        footprint=plane.footprint[win].copy(),
        row0=int(rows[0]),
        col0=int(cols[0]),
    )


def _transform_patch(color: np.ndarray, alpha: np.ndarray, transform: Transform2D) -> tuple[np.ndarray, np.ndarray]:
    """Rescale and rotate a (color, alpha) patch with bilinear resampling."""
    if transform.scale != 1.0:
        h, w = alpha.shape
        size = (max(1, round(w * transform.scale)), max(1, round(h * transform.scale)))
        premult = color * alpha[:, :, None]
        premult = cv2.resize(premult, size, interpolation=cv2.INTER_LINEAR)
        alpha = cv2.resize(alpha, size, interpolation=cv2.INTER_LINEAR)
        color = _unpremultiply(premult, alpha)
    if transform.rotation_deg != 0.0:
        h, w = alpha.shape
        angle = transform.rotation_deg
        cos, sin = abs(math.cos(math.radians(angle))), abs(math.sin(math.radians(angle)))
        out_w = int(math.ceil(w * cos + h * sin))
        out_h = int(math.ceil(w * sin + h * cos))
        matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, 1.0)
        matrix[0, 2] += out_w / 2.0 - w / 2.0
        matrix[1, 2] += out_h / 2.0 - h / 2.0
        premult = color * alpha[:, :, None]
        premult = cv2.warpAffine(premult, matrix, (out_w, out_h), flags=cv2.INTER_LINEAR)
        alpha = cv2.warpAffine(alpha, matrix, (out_w, out_h), flags=cv2.INTER_LINEAR)
        color = _unpremultiply(premult, alpha)
    alpha = np.clip(alpha, 0.0, 1.0)
    alpha[alpha <= ALPHA_FOOTPRINT_THRESHOLD] = 0.0
    return color, alpha


def _unpremultiply(premult: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    color = np.zeros_like(premult)
    covered = alpha > 1e-8
    color[covered] = premult[covered] / alpha[covered, None]
    return np.clip(color, 0.0, 1.0)


def _shift_fractional(color: np.ndarray, alpha: np.ndarray, fx: float, fy: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = alpha.shape
    matrix = np.array([[1.0, 0.0, fx], [0.0, 1.0, fy]])
    size = (w + 1, h + 1)
    premult = cv2.warpAffine(color * alpha[:, :, None], matrix, size, flags=cv2.INTER_LINEAR)
    alpha = cv2.warpAffine(alpha, matrix, size, flags=cv2.INTER_LINEAR)
    color = _unpremultiply(premult, alpha)
    alpha = np.clip(alpha, 0.0, 1.0)
    alpha[alpha <= ALPHA_FOOTPRINT_THRESHOLD] = 0.0
    return color, alpha


def materialize_patch(
    cropped: CroppedInstance,
    resolution: tuple[int, int],
    position: tuple[float, float],
    transform: Transform2D = Transform2D(),
) -> tuple[np.ndarray, np.ndarray]:
    """Expand a cropped instance to full-frame (color, alpha) arrays.

    ``position`` is the (x, y) top-left target of the transformed patch;
    the transform's translation is added on top. Integral offsets with an
    identity scale/rotation paste the patch exactly, with no resampling.
    Raises :class:`PlacementFailure` when the patch lands fully outside.
    """
    frame_h, frame_w = resolution
    color, alpha = _transform_patch(cropped.color, cropped.alpha, transform)

    x = position[0] + transform.translation[0]
    y = position[1] + transform.translation[1]
    ix, iy = int(math.floor(x)), int(math.floor(y))
    fx, fy = x - ix, y - iy
    if fx or fy:
        color, alpha = _shift_fractional(color, alpha, fx, fy)

    patch_h, patch_w = alpha.shape
    full_color = np.zeros((frame_h, frame_w, 3), dtype=np.float64)
    full_alpha = np.zeros((frame_h, frame_w), dtype=np.float64)
    src_y0, src_x0 = max(0, -iy), max(0, -ix)
    dst_y0, dst_x0 = max(0, iy), max(0, ix)
    copy_h = min(patch_h - src_y0, frame_h - dst_y0)
    copy_w = min(patch_w - src_x0, frame_w - dst_x0)
    if copy_h <= 0 or copy_w <= 0:
        raise PlacementFailure(
            f"dragged instance '{cropped.plane_id}' lands fully outside the {frame_w}x{frame_h} frame"
        )
    full_color[dst_y0:dst_y0 + copy_h, dst_x0:dst_x0 + copy_w] = color[src_y0:src_y0 + copy_h, src_x0:src_x0 + copy_w]
    full_alpha[dst_y0:dst_y0 + copy_h, dst_x0:dst_x0 + copy_w] = alpha[src_y0:src_y0 + copy_h, src_x0:src_x0 + copy_w]
    return full_color, full_alpha


def drag_across(
    cropped: CroppedInstance,
    target: np.ndarray,
    position: tuple[float, float],
    transform: Transform2D = Transform2D(),
) -> np.ndarray:
    """Paste a cropped instance onto a target image.

    The pasted plane composites over the target: new = c * a + (1 - a) * I.
    Pixels where the pasted alpha is zero are bit-identical to the input.
    """
    target = np.asarray(target, dtype=np.float64)
    color, alpha = materialize_patch(cropped, target.shape[:2], position, transform)
    out = target.copy()
    covered = alpha > 0
    a = alpha[covered, None]
    out[covered] = color[covered] * a + (1.0 - a) * target[covered]
    return out


def drag_within(
    stack: SceneStack,
    plane_id: str,
    position: tuple[float, float],
    transform: Transform2D = Transform2D(),
) -> np.ndarray:
    """Move an instance inside its own scene: remove it, then paste it back
    at the new position over the re-rendered remainder."""
    cropped = crop_instance(stack.plane(plane_id))
    base = render(remove_instance(stack, plane_id))
    return drag_across(cropped, base, position, transform)


def drag_within_stack(
    stack: SceneStack,
    plane_id: str,
    position: tuple[float, float],
    transform: Transform2D = Transform2D(),
) -> SceneStack:
    """Stack-level form of :func:`drag_within`, for sessions.

    The dragged instance is removed and re-added as the new frontmost
    plane; every other plane's visible alpha is attenuated by (1 - a_new),
    so the alpha sum stays 1 and the render matches :func:`drag_within`.
    """
    cropped = crop_instance(stack.plane(plane_id))
    removed = remove_instance(stack, plane_id)
    color, alpha = materialize_patch(cropped, stack.resolution, position, transform)

    attenuation = 1.0 - alpha
    planes = [
        Plane(
            plane_id=plane_id,
            kind=PlaneKind.INSTANCE,
            color=color,
            alpha=alpha,
            footprint=alpha > 0,
            mean_depth=min(p.mean_depth for p in removed.planes) - 1.0,
        )
    ]
    for plane in removed.planes:
        planes.append(plane.with_alpha(plane.alpha * attenuation))
    return SceneStack(planes=tuple(planes))


# ---------------------------------------------------------------------------
# inpainting hook

InpaintProvider = Callable[[np.ndarray, np.ndarray], np.ndarray]

_inpaint_provider: InpaintProvider | None = None


def register_inpaint_provider(provider: InpaintProvider | None) -> None:
    """Register (or clear, with None) the external inpainting provider."""
    global _inpaint_provider
    _inpaint_provider = provider


def inpaint_hook(region_mask: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Delegate region filling to the registered provider.

    The engine never inpaints itself: without a provider the image is
    returned unchanged; provider failures surface as
    :class:`InpaintUnavailable`.
    """
    if _inpaint_provider is None:
        return image
    try:
        out = _inpaint_provider(np.asarray(region_mask), np.asarray(image, dtype=np.float64))
    except Exception as exc:
        raise InpaintUnavailable(f"inpainting provider failed: {exc}") from exc
    out = np.asarray(out, dtype=np.float64)
    if out.shape != np.asarray(image).shape:
        raise InpaintUnavailable(
            f"inpainting provider returned shape {out.shape}, expected {np.asarray(image).shape}"
        )
    return out


# ---------------------------------------------------------------------------
# serializable edit operations

@dataclass(frozen=True)
class Remove:
    plane_id: str


@dataclass(frozen=True)
class Reorder:
    p: str
    q: str


@dataclass(frozen=True)
class DragWithin:
    plane_id: str
    position: tuple[float, float]
    transform: Transform2D = Transform2D()


EditOp = Union[Remove, Reorder, DragWithin]


def apply_op(stack: SceneStack, op: EditOp) -> SceneStack:
    """Apply a serializable edit op; returns the new stack."""
    if isinstance(op, Remove):
        return remove_instance(stack, op.plane_id)
    if isinstance(op, Reorder):
        return reorder(stack, op.p, op.q)
    if isinstance(op, DragWithin):
        return drag_within_stack(stack, op.plane_id, op.position, op.transform)
    raise TypeError(f"unknown edit op: {op!r}")


def op_to_dict(op: EditOp) -> dict:
    if isinstance(op, Remove):
        return {"op": "remove", "plane": op.plane_id}
    if isinstance(op, Reorder):
        return {"op": "reorder", "p": op.p, "q": op.q}
    if isinstance(op, DragWithin):
        return {
            "op": "drag_within",
            "plane": op.plane_id,
            "x": op.position[0],
            "y": op.position[1],
            "tx": op.transform.translation[0],
            "ty": op.transform.translation[1],
            "scale": op.transform.scale,
            "rotation": op.transform.rotation_deg,
        }
    raise TypeError(f"unknown edit op: {op!r}")


def op_from_dict(doc: dict) -> EditOp:
    kind = doc.get("op")
    if kind == "remove":
        return Remove(plane_id=doc["plane"])
    if kind == "reorder":
        return Reorder(p=doc["p"], q=doc["q"])
    if kind == "drag_within":
        return DragWithin(
            plane_id=doc["plane"],
            position=(float(doc["x"]), float(doc["y"])),
            transform=Transform2D(
                translation=(float(doc.get("tx", 0.0)), float(doc.get("ty", 0.0))),
                scale=float(doc.get("scale", 1.0)),
                rotation_deg=float(doc.get("rotation", 0.0)),
            ),
        )
    raise ValueError(f"unknown edit op kind: {kind!r}")
