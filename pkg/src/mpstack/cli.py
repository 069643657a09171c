"""Command-line front end: synth, sgmp, edit, eval, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import edit as edit_mod
from . import imgio, metrics, sgmp, synth
from .core import sort_by_depth, validate_stack
from .errors import MpstackError


@click.group()
def main():
    """Layered instance-compositing engine."""


# ---------------------------------------------------------------------------
# synth

def _load_backgrounds(directory: Path) -> list[np.ndarray]:
    from PIL import Image as PILImage

    images = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in {".png", ".jpg", ".jpeg"}:
            continue
        with PILImage.open(path) as im:
            images.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    return images


@main.command("synth")
@click.option("--cutouts", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--backgrounds", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--min-instances", type=int, default=2, show_default=True)
@click.option("--max-instances", type=int, default=6, show_default=True)
@click.option("--hard-core", is_flag=True, help="Binarize placed alphas for exact edit oracles.")
@click.option("--soft-band", type=int, default=0, show_default=True, help="Soft boundary band (px) kept when --hard-core.")
def synth_cmd(cutouts, backgrounds, count, seed, out, min_instances, max_instances, hard_core, soft_band):
    """Generate seeded synthetic scenes with ground-truth layer stacks."""
    cutout_list = [synth.load_cutout(p) for p in sorted(cutouts.glob("*.png"))]
    background_list = _load_backgrounds(backgrounds)
    if not cutout_list:
        raise click.ClickException(f"no RGBA cutout PNGs under {cutouts}")
    if not background_list:
        raise click.ClickException(f"no background images under {backgrounds}")
    policy = synth.PlacementPolicy(
        min_instances=min_instances,
        max_instances=max_instances,
        hard_core=hard_core,
        soft_band_px=soft_band,
    )
    manifests = synth.generate_dataset(cutout_list, background_list, count, seed, out, policy=policy)
    click.echo(f"wrote {len(manifests)} scene bundles under {out}")


# ---------------------------------------------------------------------------
# sgmp

@main.command("sgmp")
@click.option("--depth", "depth_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--planes", "n_planes", type=int, default=sgmp.DEFAULT_PLANE_COUNT, show_default=True)
@click.option("--tau", type=float, default=None, help="Softmax temperature; defaults to range/(4N).")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--spacing", type=click.Choice(["quantile", "linear"]), default="quantile", show_default=True)
@click.option("--max-iters", type=int, default=sgmp.DEFAULT_MAX_ITERS, show_default=True)
@click.option("--dmin", type=float, default=1.0, show_default=True, help="Depth assigned to black pixels.")
@click.option("--dmax", type=float, default=2.0, show_default=True, help="Depth assigned to white pixels.")
def sgmp_cmd(depth_file, n_planes, tau, out, spacing, max_iters, dmin, dmax):
    """Split a depth map into N soft planes; write masks plus a manifest."""
    normalized = imgio.load_gray16(depth_file)
    depth = dmin + normalized * (dmax - dmin)
    depths = sgmp.initial_plane_depths(depth, n_planes, spacing=spacing)
    depths = sgmp.refine_plane_depths(depth, depths, max_iters=max_iters)
    masks = sgmp.plane_masks(depth, depths, tau=tau)

    out.mkdir(parents=True, exist_ok=True)
    mask_files = []
    for i in range(masks.shape[0]):
        name = f"mask_{i:02d}.png"
        imgio.save_gray16(out / name, masks[i])
        mask_files.append(name)
    doc = {
        "schema": "mpstack-sgmp/1",
        "depth_file": str(depth_file),
        "depth_range": [dmin, dmax],
        "planes": masks.shape[0],
        "tau": tau if tau is not None else sgmp.default_tau(depth, n_planes),
        "spacing": spacing,
        "initial_depths": list(depths.initial),
        "refined_depths": list(depths.refined),
        "objective_history": list(depths.objective_history),
        "masks": mask_files,
    }
    (out / "sgmp_manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
    click.echo(f"wrote {masks.shape[0]} plane masks under {out}")


# ---------------------------------------------------------------------------
# edit

def _plane_ref(token: str) -> str:
    token = token.strip()
    return f"i{int(token)}" if token.isdigit() else token


def _parse_op(spec: str) -> edit_mod.EditOp:
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "remove":
            return edit_mod.Remove(plane_id=_plane_ref(rest))
        if kind == "reorder":
            p, q = rest.split(",")
            return edit_mod.Reorder(p=_plane_ref(p), q=_plane_ref(q))
        if kind == "drag":
            plane, x, y, scale, rot = rest.split(",")
            return edit_mod.DragWithin(
                plane_id=_plane_ref(plane),
                position=(float(x), float(y)),
                transform=edit_mod.Transform2D(scale=float(scale), rotation_deg=float(rot)),
            )
    except ValueError as exc:
        raise click.ClickException(f"malformed op '{spec}': {exc}") from exc
    raise click.ClickException(f"unknown op '{kind}' (expected remove:j | reorder:p,q | drag:j,x,y,scale,rot)")


@main.command("edit")
@click.option("--scene", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--op", "ops", multiple=True, help="remove:j | reorder:p,q | drag:j,x,y,scale,rot (repeatable).")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--emit-stack", type=click.Path(file_okay=False, path_type=Path), default=None)
def edit_cmd(scene, ops, out, emit_stack):
    """Apply edit ops to a scene manifest and render the result."""
    manifest = imgio.load_manifest(scene)
    stack = sort_by_depth(imgio.load_stack(manifest))
    try:
        for spec in ops:
            stack = edit_mod.apply_op(stack, _parse_op(spec))
    except MpstackError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    imgio.save_rgb8(out, edit_mod.render(stack))
    click.echo(f"wrote {out}")
    if emit_stack is not None:
        path = imgio.write_stack_bundle(stack, emit_stack)
        click.echo(f"wrote post-edit manifest {path}")


# ---------------------------------------------------------------------------
# eval

def _matte_groups(directory: Path) -> dict[str, list[Path]]:
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir())
    if subdirs:
        return {d.name: sorted(d.glob("*.png")) for d in subdirs}
    return {directory.name: sorted(directory.glob("*.png"))}


@main.command("eval")
@click.option("--pred", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--gt", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--report", type=click.Path(dir_okay=False, path_type=Path), required=True)
def eval_cmd(pred, gt, report):
    """Evaluate predicted mattes against ground truth; write a JSON report.

    Each subdirectory is treated as one image holding its instance mattes
    as 16-bit grayscale PNGs; without subdirectories the directory itself
    is one image.
    """
    pred_groups = _matte_groups(pred)
    gt_groups = _matte_groups(gt)
    names = sorted(set(pred_groups) | set(gt_groups))
    per_image = {}
    for name in names:
        preds = [imgio.load_gray16(p) for p in pred_groups.get(name, [])]
        gts = [imgio.load_gray16(p) for p in gt_groups.get(name, [])]
        per_image[name] = metrics.evaluate_image(preds, gts).to_dict()

    def mean_of(key):
        return float(np.mean([doc[key] for doc in per_image.values()])) if per_image else 0.0

    doc = {
        "images": per_image,
        "aggregate": {key: mean_of(key) for key in ("sad", "mse", "mad", "sad_o", "sad_no")},
    }
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(json.dumps(doc, indent=2) + "\n")
    click.echo(f"wrote {report}")


# ---------------------------------------------------------------------------
# validate & serve

@main.command("validate")
@click.option("--scene", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--tolerance", type=float, default=1e-3, show_default=True)
def validate_cmd(scene, tolerance):
    """Check a scene manifest's stack invariants and print the report."""
    stack = sort_by_depth(imgio.load_stack(imgio.load_manifest(scene)))
    report = validate_stack(stack, tolerance=tolerance)
    click.echo(report.summary())
    if not report.ok:
        raise SystemExit(1)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(host, port):
    """Run the HTTP session service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
