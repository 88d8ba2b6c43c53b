"""Geometric context construction: velocities, ordering, masks, normalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoigraph.errors import ContractError, LengthError, SchemaError
from hoigraph.geometry import (GeometricContext, KeypointTrack, build_context,
                               compute_velocity, normalize_positions)


def track(positions, valid=None, kind="human", entity=1, keypoint=1):
    positions = np.asarray(positions, dtype=np.float64)
    if valid is None:
        valid = np.ones(len(positions), dtype=bool)
    return KeypointTrack(entity_kind=kind, entity_index=entity, keypoint_index=keypoint,
                         positions=positions, valid=np.asarray(valid, dtype=bool))


# ---------------------------------------------------------------------------
# velocity


def test_velocity_forward_difference_example():
    v = compute_velocity(track([(0, 0), (1, 2), (1, 2)]))
    assert np.array_equal(v, np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]))


def test_velocity_constant_track_is_zero():
    v = compute_velocity(track([(0.3, 0.7)] * 5))
    assert np.array_equal(v, np.zeros((5, 2)))


def test_velocity_single_frame_is_zero():
    assert np.array_equal(compute_velocity(track([(0.2, 0.9)])), np.zeros((1, 2)))


def test_velocity_zero_when_either_endpoint_invalid():
    v = compute_velocity(track([(0, 0), (0.5, 0.5), (1, 1), (0.25, 0.5)],
                               valid=[True, False, True, True]))
    # frames 0 and 1 touch the invalid frame 1; frame 2->3 is fine; last frame zero
    assert np.array_equal(v, np.array([[0, 0], [0, 0], [-0.75, -0.5], [0, 0]]))


def test_velocity_empty_track_rejected():
    with pytest.raises(ContractError):
        compute_velocity(track(np.zeros((0, 2)), valid=np.zeros(0, dtype=bool)))


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=12),
       st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
@settings(max_examples=80, deadline=None)
def test_velocity_translation_invariance(points, shift):
    base = track(points)
    shifted = track(np.asarray(points) + np.asarray(shift))
    assert np.allclose(compute_velocity(base), compute_velocity(shifted), atol=1e-9)


@given(st.lists(st.tuples(st.integers(0, 1024), st.integers(0, 1024)),
                min_size=2, max_size=10))
@settings(max_examples=80, deadline=None)
def test_position_plus_velocity_is_exactly_next_position_on_dyadic_grid(grid_points):
    # multiples of 2^-10: the forward difference is exact in float64, so
    # p[t] + v[t] == p[t+1] must hold bitwise on valid consecutive frames
    points = np.asarray(grid_points, dtype=np.float64) / 1024.0
    tr = track(points)
    v = compute_velocity(tr)
    for t in range(len(points) - 1):
        assert np.array_equal(tr.positions[t] + v[t], tr.positions[t + 1])


# ---------------------------------------------------------------------------
# context assembly


def human_object_tracks(t_count=3, n_humans=2, n_joints=3, n_objects=2, fill=0.25):
    humans = [track([(fill, fill)] * t_count, entity=e, keypoint=k)
              for e in range(1, n_humans + 1) for k in range(1, n_joints + 1)]
    objects = [track([(fill, fill)] * t_count, kind="object", entity=f, keypoint=u)
               for f in range(1, n_objects + 1) for u in (1, 2)]
    return humans, objects


def test_context_row_count_formula():
    humans, objects = human_object_tracks(n_humans=2, n_joints=15, n_objects=4)
    ctx = build_context(humans, objects, n_humans=2, n_joints=15, n_objects=4)
    assert ctx.joint_count == 2 * 15 + 4 * 2 == 38
    assert ctx.values.shape == (3, 38, 4)


def test_context_single_keypoint_composition():
    ctx = build_context([track([(0, 0), (1, 0)])], [], n_humans=1, n_joints=1, n_objects=0)
    assert np.array_equal(ctx.values[0, 0], np.array([0.0, 0.0, 1.0, 0.0]))
    assert np.array_equal(ctx.values[1, 0], np.array([1.0, 0.0, 0.0, 0.0]))


def test_context_ordering_human_major_then_object_major(rng):
    t_count = 4
    humans, objects = [], []
    expected = {}
    for e in range(1, 3):
        for k in range(1, 4):
            pos = rng.random((t_count, 2))
            humans.append(track(pos, entity=e, keypoint=k))
            expected[("human", e, k)] = pos
    for f in range(1, 3):
        for u in (1, 2):
            pos = rng.random((t_count, 2))
            objects.append(track(pos, kind="object", entity=f, keypoint=u))
            expected[("object", f, u)] = pos
    ctx = build_context(humans, objects, n_humans=2, n_joints=3, n_objects=2)
    assert ctx.row_keys == [("human", 1, 1), ("human", 1, 2), ("human", 1, 3),
                            ("human", 2, 1), ("human", 2, 2), ("human", 2, 3),
                            ("object", 1, 1), ("object", 1, 2),
                            ("object", 2, 1), ("object", 2, 2)]
    for j, key in enumerate(ctx.row_keys):
        assert np.array_equal(ctx.values[:, j, :2], expected[key])


def test_context_input_order_does_not_matter(rng):
    humans, objects = human_object_tracks()
    for tr in humans + objects:
        tr.positions = rng.random(tr.positions.shape)
    ctx_a = build_context(humans, objects, 2, 3, 2)
    ctx_b = build_context(humans[::-1], objects[::-1], 2, 3, 2)
    assert np.array_equal(ctx_a.values, ctx_b.values)
    assert np.array_equal(ctx_a.mask, ctx_b.mask)


def test_context_rows_recompose_position_and_velocity(rng):
    humans, objects = human_object_tracks(t_count=6)
    tracks = humans + objects
    for tr in tracks:
        tr.positions = rng.random(tr.positions.shape)
        tr.valid = rng.random(6) > 0.2
    ctx = build_context(humans, objects, 2, 3, 2)
    by_key = {(tr.entity_kind, tr.entity_index, tr.keypoint_index): tr for tr in tracks}
    for j, key in enumerate(ctx.row_keys):
        tr = by_key[key]
        vel = compute_velocity(tr)
        for t in range(6):
            if tr.valid[t]:
                assert np.array_equal(ctx.values[t, j], np.concatenate([tr.positions[t], vel[t]]))
                assert ctx.mask[t, j]
            else:
                assert np.array_equal(ctx.values[t, j], np.zeros(4))
                assert not ctx.mask[t, j]


def test_context_invalid_rows_are_zero_and_masked():
    tr = track([(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)], valid=[True, False, True])
    ctx = build_context([tr], [], 1, 1, 0)
    assert not ctx.mask[1, 0]
    assert np.array_equal(ctx.values[1, 0], np.zeros(4))


def test_context_errors():
    humans, objects = human_object_tracks()
    with pytest.raises(SchemaError):
        build_context(humans[:-1], objects, 2, 3, 2)  # missing keypoint
    with pytest.raises(SchemaError):
        build_context(humans + [humans[0]], objects, 2, 3, 2)  # duplicate
    short = track([(0.1, 0.1)] * 2, entity=1, keypoint=1)
    with pytest.raises(LengthError):
        build_context([short] + humans[1:], objects, 2, 3, 2)
    with pytest.raises(ContractError):
        build_context([], [], 0, 0, 0)  # no rows at all
    too_big = track([(1.5, 0.5)] * 3, entity=1, keypoint=1)
    with pytest.raises(ContractError):
        build_context([too_big] + humans[1:], objects, 2, 3, 2)  # outside [0,1]


def test_final_frame_velocity_rows_are_zero(rng):
    humans, objects = human_object_tracks(t_count=5)
    for tr in humans + objects:
        tr.positions = rng.random(tr.positions.shape)
    ctx = build_context(humans, objects, 2, 3, 2)
    assert np.array_equal(ctx.values[-1, :, 2:], np.zeros((10, 2)))


# ---------------------------------------------------------------------------
# normalization


def test_normalize_midpoint_and_origin():
    tr = track([(1920, 1080), (0, 0)])
    out = normalize_positions([tr], 3840, 2160)[0]
    assert np.allclose(out.positions[0], [0.5, 0.5])
    assert np.array_equal(out.positions[1], [0.0, 0.0])
    assert not out.clamped.any()


def test_normalize_clamps_out_of_frame_points_with_flag():
    tr = track([(4000, 100)])
    out = normalize_positions([tr], 3840, 2160)[0]
    assert np.allclose(out.positions[0], [1.0, 100 / 2160])
    assert out.clamped[0]


def test_normalize_rejects_nonpositive_dimensions():
    with pytest.raises(ContractError):
        normalize_positions([track([(1, 1)])], 0, 100)
    with pytest.raises(ContractError):
        normalize_positions([track([(1, 1)])], 100, -5)


def test_keypoint_track_validation():
    with pytest.raises(ContractError):
        track([(0, 0)], kind="alien")
    with pytest.raises(ContractError):
        track([(0, 0)], entity=0)
    with pytest.raises(ContractError):
        track([(0, 0)], kind="object", keypoint=3)
