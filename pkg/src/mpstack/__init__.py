"""mpstack: layered instance-compositing engine.

Scenes are stacks of (color, visible alpha) planes sorted by depth with the
background as a special last plane. The stack renders as a plain sum of
color times alpha, which is what makes instance removal, occlusion
reordering, and dragging cheap alpha-level edits.
"""

from .core import (
    BACKGROUND_DEPTH,
    Plane,
    PlaneKind,
    SceneStack,
    ValidationReport,
    background_plane,
    plane_mean_depth,
    sort_by_depth,
    validate_stack,
)
from .edit import (
    DragWithin,
    EditOp,
    Remove,
    Reorder,
    Transform2D,
    apply_op,
    crop_instance,
    drag_across,
    drag_within,
    drag_within_stack,
    inpaint_hook,
    register_inpaint_provider,
    remove_instance,
    render,
    reorder,
    swap_planes,
)
from .metrics import (
    EvalReport,
    MatchKind,
    MattePair,
    composition_residual,
    editing_metrics,
    evaluate_image,
    mad,
    match_instances,
    mse,
    occlusion_split,
    sad,
)
from .sgmp import (
    PlaneDepths,
    initial_plane_depths,
    plane_masks,
    refine_plane_depths,
)
from .synth import (
    Cutout,
    PlacementPolicy,
    SceneRecord,
    compose_scene,
    generate_scene,
    make_reorder_pair,
    place_instances,
    visible_alphas,
    write_scene_record,
)

__version__ = "0.1.0"
