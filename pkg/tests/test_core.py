import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpstack.core import (
    BACKGROUND_DEPTH,
    Plane,
    PlaneKind,
    SceneStack,
    as_color,
    as_depth_map,
    background_plane,
    plane_mean_depth,
    sort_by_depth,
    validate_stack,
)
from mpstack.edit import remove_instance
from mpstack.errors import EmptyInstance, UnknownPlane

from conftest import make_scene


def _instance(pid, alpha, depth, color_value=0.5, footprint=None):
    alpha = np.asarray(alpha, dtype=np.float64)
    color = np.full(alpha.shape + (3,), color_value)
    if footprint is None:
        footprint = alpha > 0
    return Plane(
        plane_id=pid,
        kind=PlaneKind.INSTANCE,
        color=color,
        alpha=alpha,
        footprint=footprint,
        mean_depth=depth,
    )


def _bg(shape, alpha=None, value=0.2):
    if alpha is None:
        alpha = np.ones(shape)
    return background_plane(np.full(shape + (3,), value), alpha)


class TestMeanDepth:
    def test_arithmetic_mean_over_support(self):
        alpha = np.array([[1.0, 1.0], [0.0, 0.0]])
        depth = np.array([[2.0, 4.0], [9.0, 9.0]])
        assert plane_mean_depth(alpha, depth) == 3.0

    def test_background_is_infinite(self):
        alpha = np.ones((2, 2))
        depth = np.full((2, 2), 5.0)
        assert plane_mean_depth(alpha, depth, background=True) == math.inf

    def test_empty_support_raises(self):
        with pytest.raises(EmptyInstance):
            plane_mean_depth(np.zeros((2, 2)), np.ones((2, 2)))

    def test_resolution_mismatch_raises(self):
        with pytest.raises(ValueError):
            plane_mean_depth(np.ones((2, 2)), np.ones((2, 3)))

    @given(factor=st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=25, deadline=None)
    def test_invariant_under_alpha_rescaling(self, factor):
        rng = np.random.default_rng(5)
        alpha = rng.uniform(0, 1, size=(6, 7)) * (rng.uniform(size=(6, 7)) > 0.4)
        depth = rng.uniform(1, 9, size=(6, 7))
        if not (alpha > 0).any():
            alpha[0, 0] = 0.5
        assert plane_mean_depth(alpha, depth) == plane_mean_depth(alpha * factor, depth)


class TestSortByDepth:
    def _stack(self, depths):
        shape = (2, 2)
        planes = [_instance(f"i{k}", np.ones(shape) * 0.0, d) for k, d in enumerate(depths)]
        planes.append(_bg(shape, alpha=np.ones(shape)))
        return SceneStack(planes=tuple(planes))

    def test_orders_ascending_background_last(self):
        stack = self._stack([3.0, 1.0])
        ordered = sort_by_depth(stack)
        assert [p.mean_depth for p in ordered.planes] == [1.0, 3.0, BACKGROUND_DEPTH]
        assert ordered.planes[-1].is_background

    def test_idempotent(self):
        stack = sort_by_depth(self._stack([3.0, 1.0, 2.0]))
        again = sort_by_depth(stack)
        assert [p.plane_id for p in again.planes] == [p.plane_id for p in stack.planes]

    def test_stable_for_equal_depths(self):
        stack = self._stack([2.0, 2.0])
        ordered = sort_by_depth(stack)
        assert [p.plane_id for p in ordered.planes[:2]] == ["i0", "i1"]

    def test_is_a_permutation(self):
        stack = self._stack([5.0, 1.0, 3.0, 1.0])
        ordered = sort_by_depth(stack)
        assert sorted(p.plane_id for p in ordered.planes) == sorted(p.plane_id for p in stack.planes)


class TestValidateStack:
    def test_fresh_scene_passes(self, soft_scene):
        report = validate_stack(soft_scene.stack)
        assert report.ok
        assert report.max_alpha_sum_error <= 1e-6

    def test_out_of_range_alpha_reported(self):
        shape = (2, 2)
        bad = _instance("i0", np.full(shape, 1.5), 1.0, footprint=np.ones(shape, bool))
        stack = SceneStack(planes=(bad, _bg(shape, alpha=np.zeros(shape))))
        report = validate_stack(stack)
        assert not report.check("alpha_range").passed

    def test_footprint_violations_counted(self):
        shape = (2, 2)
        bad = _instance("i0", np.full(shape, 0.5), 1.0, footprint=np.zeros(shape, bool))
        stack = SceneStack(planes=(bad, _bg(shape, alpha=np.full(shape, 0.5))))
        report = validate_stack(stack)
        assert not report.check("footprint_containment").passed
        assert report.footprint_violations == 4

    def test_alpha_sum_still_passes_after_removal(self, soft_scene):
        edited = remove_instance(soft_scene.stack, "i0")
        report = validate_stack(edited)
        assert report.check("alpha_sum").passed

    def test_depth_order_violation_reported(self):
        shape = (2, 2)
        planes = (
            _instance("i0", np.zeros(shape), 5.0),
            _instance("i1", np.zeros(shape), 1.0),
            _bg(shape),
        )
        report = validate_stack(SceneStack(planes=planes))
        assert not report.check("depth_order").passed


class TestStructuralValidation:
    def test_exactly_one_background_required(self):
        shape = (2, 2)
        with pytest.raises(ValueError):
            SceneStack(planes=(_instance("i0", np.zeros(shape), 1.0),))
        with pytest.raises(ValueError):
            SceneStack(planes=(_bg(shape), _bg(shape)))

    def test_unique_plane_ids_required(self):
        shape = (2, 2)
        with pytest.raises(ValueError):
            SceneStack(planes=(_instance("x", np.zeros(shape), 1.0), _instance("x", np.zeros(shape), 2.0), _bg(shape)))

    def test_resolution_mismatch_rejected(self):
        with pytest.raises(ValueError):
            SceneStack(planes=(_instance("i0", np.zeros((2, 2)), 1.0), _bg((3, 3))))

    def test_background_needs_infinite_depth(self):
        with pytest.raises(ValueError):
            Plane(
                plane_id="bg",
                kind=PlaneKind.BACKGROUND,
                color=np.zeros((2, 2, 3)),
                alpha=np.ones((2, 2)),
                footprint=np.ones((2, 2), bool),
                mean_depth=3.0,
            )

    def test_unknown_plane_lookup(self, soft_scene):
        with pytest.raises(UnknownPlane):
            soft_scene.stack.index_of("nope")

    def test_planes_are_read_only(self, soft_scene):
        plane = soft_scene.stack.planes[0]
        with pytest.raises(ValueError):
            plane.alpha[0, 0] = 0.5


class TestArrayValidators:
    def test_color_shape_enforced(self):
        with pytest.raises(ValueError):
            as_color(np.zeros((4, 4)))

    def test_depth_map_must_be_positive_finite(self):
        with pytest.raises(ValueError):
            as_depth_map(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            as_depth_map(np.full((2, 2), np.inf))


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=10, deadline=None)
def test_ground_truth_alpha_sums_to_one(seed):
    record = make_scene(seed=seed, n_instances=2, height=32, width=40)
    assert np.abs(record.stack.alpha_sum() - 1.0).max() <= 1e-6
