"""Voxel grid, delta, and gaze-ray behavior."""
import math
import random

import pytest

from voxloop.world import (
    AIR,
    AXIS_STEPS,
    Blocked,
    NothingThere,
    Occupied,
    OutOfBounds,
    Pose,
    Region,
    StaleDelta,
    VoxelGrid,
    WorldDelta,
    apply_delta,
    destroy_block,
    look_target,
    place_block,
    point_at,
    revert_delta,
    snapshot_doc,
    snapshot_from_text,
    snapshot_to_text,
    step_agent,
)


def grid(dims=(8, 8, 8)):
    return VoxelGrid(dims)


def test_place_block_records_delta():
    g = grid()
    delta = place_block(g, (1, 1, 1), 3)
    assert delta.entries == (((1, 1, 1), 0, 3),)
    assert g.get((1, 1, 1)) == 3


def test_place_on_occupied_cell_is_an_error():
    g = grid()
    place_block(g, (1, 1, 1), 3)
    with pytest.raises(Occupied):
        place_block(g, (1, 1, 1), 4)


def test_place_out_of_bounds():
    g = grid((4, 4, 4))
    with pytest.raises(OutOfBounds):
        place_block(g, (4, 0, 0), 1)


def test_destroy_inverts_place():
    g = grid()
    place_block(g, (1, 1, 1), 3)
    delta = destroy_block(g, (1, 1, 1))
    assert delta.entries == (((1, 1, 1), 3, 0),)
    assert g.is_air((1, 1, 1))


def test_destroy_air_is_an_error():
    with pytest.raises(NothingThere):
        destroy_block(grid(), (2, 2, 2))


def test_destroy_then_replace_restores_grid():
    g = grid()
    place_block(g, (1, 2, 3), 5)
    snapshot = dict(g.cells)
    destroy_block(g, (1, 2, 3))
    place_block(g, (1, 2, 3), 5)
    assert g.cells == snapshot


def test_step_agent_moves_into_air():
    g = grid()
    pose = Pose(0, 1, 0)
    moved = step_agent(pose, g, (1, 0, 0))
    assert moved.position == (1, 1, 0)
    assert (moved.pitch, moved.yaw) == (pose.pitch, pose.yaw)


def test_step_agent_blocked_by_block():
    g = grid()
    place_block(g, (1, 1, 0), 2)
    with pytest.raises(Blocked):
        step_agent(Pose(0, 1, 0), g, (1, 0, 0))


def test_step_agent_out_of_bounds():
    with pytest.raises(OutOfBounds):
        step_agent(Pose(0, 1, 0), grid(), (-1, 0, 0))


def test_step_agent_never_changes_cells():
    g = grid()
    place_block(g, (3, 3, 3), 2)
    before = dict(g.cells)
    step_agent(Pose(0, 1, 0), g, (0, 0, 1))
    assert g.cells == before


def test_apply_then_revert_is_identity():
    g = grid()
    delta = WorldDelta((((1, 1, 1), 0, 4), ((1, 2, 1), 0, 4), ((1, 1, 1), 4, 0)))
    apply_delta(g, delta)
    revert_delta(g, delta)
    assert g.cells == {}


def test_apply_on_mismatching_world_is_stale():
    g = grid()
    place_block(g, (1, 1, 1), 7)
    with pytest.raises(StaleDelta):
        apply_delta(g, WorldDelta((((1, 1, 1), 0, 4),)))


def test_delta_rejects_noop_entries():
    with pytest.raises(ValueError):
        WorldDelta((((0, 0, 0), 3, 3),))


def test_random_edit_history_replays_exactly():
    # Replaying recorded deltas from the initial grid must rebuild the final
    # grid, and reverting them in reverse must restore the initial grid.
    rng = random.Random(1234)
    for _ in range(50):
        g = grid((6, 6, 6))
        deltas = []
        for _ in range(100):
            pos = (rng.randrange(6), rng.randrange(6), rng.randrange(6))
            if g.is_air(pos):
                deltas.append(place_block(g, pos, rng.randrange(1, 17)))
            else:
                deltas.append(destroy_block(g, pos))
        final = dict(g.cells)
        replay = grid((6, 6, 6))
        for d in deltas:
            apply_delta(replay, d)
        assert replay.cells == final
        for d in reversed(deltas):
            revert_delta(replay, d)
        assert replay.cells == {}


def test_point_at_normalizes_inverted_corners():
    g = grid()
    event = point_at(g, Region((3, 3, 3), (1, 1, 1)))
    assert event.region.lo == (1, 1, 1)
    assert event.region.hi == (3, 3, 3)
    assert event.duration == 2


def test_point_at_single_voxel_region():
    event = point_at(grid(), Region((2, 2, 2), (2, 2, 2)))
    assert list(event.region.positions()) == [(2, 2, 2)]


def test_point_at_out_of_bounds():
    with pytest.raises(OutOfBounds):
        point_at(grid((4, 4, 4)), Region((0, 0, 0), (4, 1, 1)))


def test_look_target_straight_ahead():
    g = grid()
    place_block(g, (3, 1, 0), 2)
    assert look_target(Pose(0, 1, 0, pitch=0, yaw=0), g) == (3, 1, 0)


def test_look_target_empty_world():
    assert look_target(Pose(0, 1, 0), grid()) is None


def test_look_target_ignores_blocks_behind():
    g = grid()
    place_block(g, (0, 1, 0), 2)
    assert look_target(Pose(3, 1, 0, pitch=0, yaw=0), g) is None


def test_look_target_respects_max_range():
    g = grid((40, 8, 8))
    place_block(g, (30, 1, 0), 2)
    assert look_target(Pose(0, 1, 0), g, max_range=8) is None
    assert look_target(Pose(0, 1, 0), g, max_range=32) == (30, 1, 0)


def _sampled_look_target(pose, g, max_range=32.0, step=0.01):
    """Dense-sampling oracle for the gaze raycast."""
    ox, oy, oz = pose.x + 0.5, pose.y + 0.5, pose.z + 0.5
    dx, dy, dz = pose.direction()
    t = 0.0
    while t <= max_range:
        voxel = (math.floor(ox + t * dx), math.floor(oy + t * dy), math.floor(oz + t * dz))
        if not g.in_bounds(voxel):
            return None
        if not g.is_air(voxel):
            return voxel
        t += step
    return None


def test_look_target_matches_dense_sampling():
    rng = random.Random(7)
    for _ in range(40):
        g = grid((12, 12, 12))
        for _ in range(25):
            pos = (rng.randrange(12), rng.randrange(12), rng.randrange(12))
            if g.is_air(pos):
                place_block(g, pos, 1)
        pose = Pose(
            rng.randrange(12), rng.randrange(12), rng.randrange(12),
            pitch=rng.uniform(-80, 80), yaw=rng.uniform(0, 360),
        )
        got = look_target(pose, g, max_range=20)
        want = _sampled_look_target(pose, g, max_range=20)
        assert got == want
        if got is not None:
            assert not g.is_air(got)


def test_pose_angle_invariants():
    assert Pose(0, 0, 0, yaw=370).yaw == 10
    with pytest.raises(ValueError):
        Pose(0, 0, 0, pitch=120)


def test_snapshot_round_trip():
    g = grid((5, 5, 5))
    place_block(g, (1, 2, 3), 4)
    place_block(g, (0, 0, 0), 2)
    agent, player = Pose(0, 1, 0, yaw=90), Pose(4, 1, 4, pitch=-10)
    text = snapshot_to_text(snapshot_doc(g, agent, player))
    g2, a2, p2 = snapshot_from_text(text)
    assert g2 == g
    assert (a2, p2) == (agent, player)
    # canonical: serializing again yields identical bytes
    assert snapshot_to_text(snapshot_doc(g2, a2, p2)) == text


def test_axis_steps_are_the_six_units():
    assert len(set(AXIS_STEPS)) == 6
    assert all(sum(map(abs, s)) == 1 for s in AXIS_STEPS)
