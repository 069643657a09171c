"""PNG image I/O, quantization, and the scene-manifest schema.

Disk formats: color as 8-bit RGB PNG, alpha/footprint as 16-bit grayscale
PNG, depth maps as 16-bit grayscale PNG normalized over a (min, max) range
that the manifest records for dequantization. In memory everything is
float64 in [0, 1] (see :mod:`mpstack.core`).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import Plane, PlaneKind, SceneStack, background_plane
from .errors import LoadError

MANIFEST_NAME = "manifest.json"
SCENE_SCHEMA = "mpstack-scene/1"


# ---------------------------------------------------------------------------
# quantization

def quantize_u8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize_u8(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / 255.0


def quantize_u16(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 65535.0).astype(np.uint16)


def dequantize_u16(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / 65535.0


# ---------------------------------------------------------------------------
# PNG encode/decode

def encode_rgb8(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(quantize_u8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_rgb8(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"))
    return dequantize_u8(arr)


def encode_gray16(values: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(quantize_u16(values)).save(buf, format="PNG")
    return buf.getvalue()


def decode_gray16(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as im:
        arr = np.asarray(im)
    if arr.dtype not in (np.uint16, np.int32):
        raise LoadError(f"expected a 16-bit grayscale PNG, got dtype {arr.dtype}")
    return dequantize_u16(arr.astype(np.uint16))


def save_rgb8(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_rgb8(image))


def load_rgb8(path) -> np.ndarray:
    return decode_rgb8(_read_file(path))


def save_gray16(path, values: np.ndarray) -> None:
    Path(path).write_bytes(encode_gray16(values))


def load_gray16(path) -> np.ndarray:
    return decode_gray16(_read_file(path))


def save_depth16(path, depth: np.ndarray) -> tuple[float, float]:
    """Write a depth map as normalized 16-bit PNG; returns the (min, max) range."""
    depth = np.asarray(depth, dtype=np.float64)
    dmin, dmax = float(depth.min()), float(depth.max())
    if dmax > dmin:
        normalized = (depth - dmin) / (dmax - dmin)
    else:
        normalized = np.zeros_like(depth)
    save_gray16(path, normalized)
    return dmin, dmax


def load_depth16(path, dmin: float, dmax: float) -> np.ndarray:
    normalized = load_gray16(path)
    return dmin + normalized * (dmax - dmin)


def _read_file(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing file: {path}", field=path.name)
    return path.read_bytes()


# ---------------------------------------------------------------------------
# manifest schema

@dataclass(frozen=True)
class LayerFiles:
    """Per-instance file references plus placement metadata."""

    plane_id: str
    z_index: int
    depth: float
    color: str
    visible_alpha: str
    footprint: str
    full_alpha: str | None = None


@dataclass(frozen=True)
class SceneManifest:
    width: int
    height: int
    seed: int | None
    background_color: str
    background_alpha: str
    layers: tuple[LayerFiles, ...]
    composite: str | None = None
    reorder_pair: tuple[int, int] | None = None
    swapped_composite: str | None = None
    depth_range: tuple[float, float] | None = None
    edit_log: tuple[dict, ...] = ()
    base_dir: Path = Path(".")

    def resolve(self, name: str) -> Path:
        return self.base_dir / name

    def layer(self, plane_id: str) -> LayerFiles:
        for entry in self.layers:
            if entry.plane_id == plane_id:
                return entry
        raise LoadError(f"manifest has no layer '{plane_id}'", field="layers")


def manifest_to_dict(manifest: SceneManifest) -> dict:
    doc = {
        "schema": SCENE_SCHEMA,
        "width": manifest.width,
        "height": manifest.height,
        "seed": manifest.seed,
        "background": {
            "color": manifest.background_color,
            "visible_alpha": manifest.background_alpha,
        },
        "layers": [
            {k: v for k, v in asdict(entry).items() if v is not None}
            for entry in manifest.layers
        ],
    }
    if manifest.composite is not None:
        doc["composite"] = manifest.composite
    if manifest.reorder_pair is not None:
        doc["reorder_pair"] = list(manifest.reorder_pair)
    if manifest.swapped_composite is not None:
        doc["swapped_composite"] = manifest.swapped_composite
    if manifest.depth_range is not None:
        doc["depth_range"] = list(manifest.depth_range)
    if manifest.edit_log:
        doc["edit_log"] = list(manifest.edit_log)
    return doc


def save_manifest(manifest: SceneManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.base_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n")
    return path


def load_manifest(path) -> SceneManifest:
    """Parse and structurally validate a scene manifest.

    Raises :class:`LoadError` naming the offending field on any schema
    problem; referenced files are checked when the stack is loaded.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest is not valid JSON: {exc}") from exc

    def need(obj, key, kind, where):
        if key not in obj:
            raise LoadError(f"manifest missing '{where}'", field=where)
        value = obj[key]
        if kind is not None and not isinstance(value, kind):
            raise LoadError(f"manifest field '{where}' has wrong type", field=where)
        return value

    if doc.get("schema") != SCENE_SCHEMA:
        raise LoadError(f"unsupported manifest schema: {doc.get('schema')!r}", field="schema")
    width = need(doc, "width", int, "width")
    height = need(doc, "height", int, "height")
    background = need(doc, "background", dict, "background")
    bg_color = need(background, "color", str, "background.color")
    bg_alpha = need(background, "visible_alpha", str, "background.visible_alpha")

    raw_layers = need(doc, "layers", list, "layers")
    layers = []
    for i, raw in enumerate(raw_layers):
        where = f"layers[{i}]"
        if not isinstance(raw, dict):
            raise LoadError(f"manifest field '{where}' must be an object", field=where)
        layers.append(
            LayerFiles(
                plane_id=need(raw, "plane_id", str, f"{where}.plane_id"),
                z_index=need(raw, "z_index", int, f"{where}.z_index"),
                depth=float(need(raw, "depth", (int, float), f"{where}.depth")),
                color=need(raw, "color", str, f"{where}.color"),
                visible_alpha=need(raw, "visible_alpha", str, f"{where}.visible_alpha"),
                footprint=need(raw, "footprint", str, f"{where}.footprint"),
                full_alpha=raw.get("full_alpha"),
            )
        )
    z_indices = sorted(entry.z_index for entry in layers)
    if z_indices != list(range(len(layers))):
        raise LoadError("layer z_index values must form a permutation of 0..S-1", field="layers")

    pair = doc.get("reorder_pair")
    if pair is not None:
        if (not isinstance(pair, list)) or len(pair) != 2 or not all(isinstance(v, int) for v in pair):
            raise LoadError("reorder_pair must be a pair of z indices", field="reorder_pair")
        pair = (pair[0], pair[1])

    depth_range = doc.get("depth_range")
    if depth_range is not None:
        depth_range = (float(depth_range[0]), float(depth_range[1]))

    return SceneManifest(
        width=width,
        height=height,
        seed=doc.get("seed"),
        background_color=bg_color,
        background_alpha=bg_alpha,
        layers=tuple(sorted(layers, key=lambda e: e.z_index)),
        composite=doc.get("composite"),
        reorder_pair=pair,
        swapped_composite=doc.get("swapped_composite"),
        depth_range=depth_range,
        edit_log=tuple(doc.get("edit_log", ())),
        base_dir=path.parent,
    )


# ---------------------------------------------------------------------------
# stack <-> bundle

def write_stack_bundle(
    stack: SceneStack,
    out_dir,
    *,
    seed: int | None = None,
    composite: np.ndarray | None = None,
    full_alphas: dict[str, np.ndarray] | None = None,
    reorder_pair: tuple[int, int] | None = None,
    swapped_composite: np.ndarray | None = None,
    edit_log: tuple[dict, ...] = (),
) -> Path:
    """Write a stack (plus optional ground-truth extras) as a manifest bundle.

    Returns the manifest path. Layer files are named after plane ids, so the
    bundle round-trips through :func:`load_stack` with identical ids.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = stack.resolution

    bg = stack.background
    save_rgb8(out_dir / "bg_color.png", bg.color)
    save_gray16(out_dir / "bg_alpha.png", bg.alpha)

    layers = []
    z = 0
    depths = []
    for plane in stack.planes:
        if plane.is_background:
            continue
        prefix = plane.plane_id
        save_rgb8(out_dir / f"{prefix}_color.png", plane.color)
        save_gray16(out_dir / f"{prefix}_alpha.png", plane.alpha)
        save_gray16(out_dir / f"{prefix}_footprint.png", plane.footprint.astype(np.float64))
        full_alpha_name = None
        if full_alphas and plane.plane_id in full_alphas:
            full_alpha_name = f"{prefix}_full_alpha.png"
            save_gray16(out_dir / full_alpha_name, full_alphas[plane.plane_id])
        layers.append(
            LayerFiles(
                plane_id=plane.plane_id,
                z_index=z,
                depth=plane.mean_depth,
                color=f"{prefix}_color.png",
                visible_alpha=f"{prefix}_alpha.png",
                footprint=f"{prefix}_footprint.png",
                full_alpha=full_alpha_name,
            )
        )
        depths.append(plane.mean_depth)
        z += 1

    composite_name = None
    if composite is not None:
        composite_name = "composite.png"
        save_rgb8(out_dir / composite_name, composite)
    swapped_name = None
    if swapped_composite is not None:
        swapped_name = "swapped_composite.png"
        save_rgb8(out_dir / swapped_name, swapped_composite)

    manifest = SceneManifest(
        width=w,
        height=h,
        seed=seed,
        background_color="bg_color.png",
        background_alpha="bg_alpha.png",
        layers=tuple(layers),
        composite=composite_name,
        reorder_pair=reorder_pair,
        swapped_composite=swapped_name,
        depth_range=(min(depths), max(depths)) if depths else None,
        edit_log=tuple(edit_log),
        base_dir=out_dir,
    )
    return save_manifest(manifest)


def _load_sized(manifest: SceneManifest, name: str, loader, field: str) -> np.ndarray:
    arr = loader(manifest.resolve(name))
    if arr.shape[:2] != (manifest.height, manifest.width):
        raise LoadError(
            f"file '{name}' has resolution {arr.shape[1]}x{arr.shape[0]}, "
            f"manifest says {manifest.width}x{manifest.height}",
            field=field,
        )
    return arr


def load_stack(manifest: SceneManifest) -> SceneStack:
    """Rebuild the depth-sorted stack referenced by a manifest."""
    planes = []
    for entry in manifest.layers:
        planes.append(
            Plane(
                plane_id=entry.plane_id,
                kind=PlaneKind.INSTANCE,
                color=_load_sized(manifest, entry.color, load_rgb8, f"layers[{entry.z_index}].color"),
                alpha=_load_sized(manifest, entry.visible_alpha, load_gray16, f"layers[{entry.z_index}].visible_alpha"),
                footprint=_load_sized(manifest, entry.footprint, load_gray16, f"layers[{entry.z_index}].footprint") > 0.5,
                mean_depth=entry.depth,
            )
        )
    planes.append(
        background_plane(
            color=_load_sized(manifest, manifest.background_color, load_rgb8, "background.color"),
            alpha=_load_sized(manifest, manifest.background_alpha, load_gray16, "background.visible_alpha"),
        )
    )
    return SceneStack(planes=tuple(planes))


def load_full_alphas(manifest: SceneManifest) -> dict[str, np.ndarray]:
    """Load the pre-occlusion alphas for every layer that recorded one."""
    out = {}
    for entry in manifest.layers:
        if entry.full_alpha is not None:
            out[entry.plane_id] = _load_sized(
                manifest, entry.full_alpha, load_gray16, f"layers[{entry.z_index}].full_alpha"
            )
    return out
