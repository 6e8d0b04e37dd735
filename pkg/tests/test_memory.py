"""Perception heuristics and the queryable object memory."""
import pytest

from voxloop.lf import DialogueType, Filters, LogicalForm, Span, WhereClause, where
from voxloop.memory import (
    AgentMemory,
    EmptyMask,
    NoReferent,
    answer_get_memory,
    apply_put_memory,
    color_of,
    detect_components,
    detect_ground,
)
from voxloop.world import Pose, VoxelGrid, place_block


def flat_world(dims=(12, 8, 12), ground_id=10):
    grid = VoxelGrid(dims)
    for x in range(dims[0]):
        for z in range(dims[2]):
            grid._set((x, 0, z), ground_id)
    return grid


def add_cube(grid, corner, side=2, material=3):
    cells = []
    for dx in range(side):
        for dy in range(side):
            for dz in range(side):
                pos = (corner[0] + dx, corner[1] + dy, corner[2] + dz)
                place_block(grid, pos, material)
                cells.append(pos)
    return frozenset(cells)


def test_detect_ground_flat_world():
    grid = flat_world()
    ground = detect_ground(grid)
    assert len(ground) == 12 * 12
    assert all(y == 0 for _, y, _ in ground)


def test_detect_ground_empty_world():
    assert detect_ground(VoxelGrid((4, 4, 4))) == frozenset()


def test_detect_ground_excludes_objects():
    grid = flat_world()
    cube = add_cube(grid, (3, 1, 3))
    ground = detect_ground(grid)
    assert not (ground & cube)
    assert len(ground) == 12 * 12


def test_detect_components_isolated_block():
    grid = flat_world()
    place_block(grid, (5, 1, 5), 3)
    comps = detect_components(grid, detect_ground(grid))
    assert comps == [frozenset({(5, 1, 5)})]


def test_detect_components_two_separated_cubes():
    grid = flat_world()
    a = add_cube(grid, (1, 1, 1))
    b = add_cube(grid, (7, 1, 7))
    comps = detect_components(grid, detect_ground(grid))
    assert sorted(comps, key=min) == sorted([a, b], key=min)


def test_corner_touching_voxels_depend_on_connectivity():
    grid = VoxelGrid((6, 6, 6))
    place_block(grid, (1, 1, 1), 2)
    place_block(grid, (2, 2, 2), 2)
    assert len(detect_components(grid, frozenset(), connectivity=6)) == 2
    assert len(detect_components(grid, frozenset(), connectivity=26)) == 1


def flood_fill_oracle(cells, connectivity):
    remaining = set(cells)
    comps = []
    while remaining:
        stack = [remaining.pop()]
        comp = set(stack)
        while stack:
            x, y, z = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                            continue
                        if dx == dy == dz == 0:
                            continue
                        n = (x + dx, y + dy, z + dz)
                        if n in remaining:
                            remaining.discard(n)
                            comp.add(n)
                            stack.append(n)
        comps.append(frozenset(comp))
    return sorted(comps, key=min)


def test_components_match_flood_fill_oracle():
    import random

    rng = random.Random(31)
    for _ in range(25):
        grid = VoxelGrid((7, 7, 7))
        for _ in range(40):
            pos = (rng.randrange(7), rng.randrange(7), rng.randrange(7))
            if grid.is_air(pos):
                place_block(grid, pos, 1)
        for connectivity in (6, 26):
            got = detect_components(grid, frozenset(), connectivity)
            assert got == flood_fill_oracle(set(grid.cells), connectivity)


def test_components_cover_non_ground_voxels_disjointly():
    grid = flat_world()
    add_cube(grid, (1, 1, 1))
    add_cube(grid, (6, 1, 6), side=3, material=5)
    ground = detect_ground(grid)
    comps = detect_components(grid, ground)
    union = set()
    total = 0
    for comp in comps:
        union |= comp
        total += len(comp)
    assert total == len(union)  # pairwise disjoint
    assert union == set(grid.cells) - ground


def test_color_of_gold_cube_is_yellow():
    grid = VoxelGrid((4, 4, 4))
    mask = add_cube(grid, (0, 0, 0), side=2, material=2)  # gold blocks
    assert color_of(grid, mask) == "yellow"


def test_color_of_uses_mode_and_tie_rule():
    grid = VoxelGrid((8, 4, 4))
    reds = [(0, 0, 0), (1, 0, 0), (2, 0, 0)]
    for p in reds:
        place_block(grid, p, 3)
    place_block(grid, (3, 0, 0), 4)
    assert color_of(grid, reds + [(3, 0, 0)]) == "red"
    grid2 = VoxelGrid((8, 4, 4))
    for p, i in [((0, 0, 0), 3), ((1, 0, 0), 3), ((2, 0, 0), 4), ((3, 0, 0), 4)]:
        place_block(grid2, p, i)
    assert color_of(grid2, [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)]) == "red"


def test_color_of_rejects_empty_mask():
    with pytest.raises(EmptyMask):
        color_of(VoxelGrid((2, 2, 2)), [])


def test_perceive_inserts_object_with_color():
    grid = flat_world()
    add_cube(grid, (2, 1, 2), material=3)
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    nodes = memory.object_nodes()
    assert len(nodes) == 1
    assert ("has_colour", "red") in nodes[0].tags
    assert ("has_tag", "object") in nodes[0].tags


def test_perceive_retires_destroyed_objects():
    grid = flat_world()
    cube = add_cube(grid, (2, 1, 2))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    assert len(memory.object_nodes()) == 1
    for pos in cube:
        grid._set(pos, 0)
    memory.perceive(grid, tick=1)
    assert memory.object_nodes() == []


def test_perceive_preserves_identity_over_small_edits():
    grid = flat_world((16, 10, 16))
    add_cube(grid, (3, 1, 3), side=3, material=4)
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    (node,) = memory.object_nodes()
    node.tags.add(("has_name", "house"))
    original_id = node.id
    # move one block of the 27: overlap 26/27 keeps the node id and user tags
    grid._set((3, 1, 3), 0)
    place_block(grid, (3, 4, 3), 4)
    memory.perceive(grid, tick=1)
    (node2,) = memory.object_nodes()
    assert node2.id == original_id
    assert ("has_name", "house") in node2.tags


def test_perceive_is_idempotent_on_static_world():
    grid = flat_world()
    add_cube(grid, (2, 1, 2))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    assert memory.perceive(grid, tick=1) == []


def test_query_matches_all_conjuncts():
    grid = flat_world((16, 8, 16))
    add_cube(grid, (1, 1, 1), material=3)   # red
    add_cube(grid, (8, 1, 8), material=4)   # blue
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    red, blue = memory.object_nodes()
    red.tags.add(("has_name", "cube"))
    blue.tags.add(("has_name", "cube"))
    got = memory.query([("has_colour", "red"), ("has_name", "cube")])
    assert [n.id for n in got] == [red.id]
    assert len(memory.query([("has_name", "cube")])) == 2


def test_query_folds_name_synonyms():
    grid = flat_world()
    add_cube(grid, (2, 1, 2))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    (node,) = memory.object_nodes()
    node.tags.add(("has_name", "cube"))
    assert memory.query([("has_name", "box")]) == [node]
    assert memory.query([("has_name", "cubes")]) == [node]


def test_query_results_ordered_by_id_regardless_of_tagging_order():
    grid = flat_world((16, 8, 16))
    add_cube(grid, (8, 1, 8))
    add_cube(grid, (1, 1, 1))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    ids = [n.id for n in memory.query([("has_tag", "object")])]
    assert ids == sorted(ids)


def gaze_pose_at(target):
    # stand west of the target looking along +x
    return Pose(0, target[1], target[2], pitch=0, yaw=0)


def test_put_memory_via_gaze_then_query():
    grid = flat_world()
    cube = add_cube(grid, (5, 1, 3))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    memory.add_chat("player", "that is a house", 0)
    form = LogicalForm(DialogueType.PUT_MEMORY, upsert=("has_name", Span(0, 3, 3)))
    player = gaze_pose_at(min(cube))
    node = apply_put_memory(memory, form, memory.chat_texts(), grid, player)
    assert ("has_name", "house") in node.tags
    assert memory.query([("has_name", "house")]) == [node]


def test_put_memory_without_referent():
    grid = flat_world()
    memory = AgentMemory()
    memory.add_chat("player", "that is a house", 0)
    form = LogicalForm(DialogueType.PUT_MEMORY, upsert=("has_name", Span(0, 3, 3)))
    player = Pose(0, 3, 0, pitch=45, yaw=0)  # looking at the sky
    with pytest.raises(NoReferent):
        apply_put_memory(memory, form, memory.chat_texts(), grid, player)


def test_get_memory_name_answer():
    grid = flat_world()
    cube = add_cube(grid, (5, 1, 3))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    (node,) = memory.object_nodes()
    node.tags.add(("has_name", "house"))
    memory.add_chat("player", "what is that", 0)
    form = LogicalForm(DialogueType.GET_MEMORY, answer_type="NAME")
    got = answer_get_memory(memory, form, memory.chat_texts(), grid, gaze_pose_at(min(cube)))
    assert got == "house"


def test_get_memory_falls_back_to_color_description():
    grid = flat_world()
    cube = add_cube(grid, (5, 1, 3), material=3)
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    form = LogicalForm(DialogueType.GET_MEMORY, answer_type="NAME")
    got = answer_get_memory(memory, form, memory.chat_texts() or [""], grid, gaze_pose_at(min(cube)))
    assert got == "red object"


def test_get_memory_count_answer():
    grid = flat_world((16, 8, 16))
    add_cube(grid, (1, 1, 1))
    add_cube(grid, (8, 1, 8))
    memory = AgentMemory()
    memory.perceive(grid, tick=0)
    for node in memory.object_nodes():
        node.tags.add(("has_name", "cube"))
    memory.add_chat("player", "how many cubes are there", 0)
    form = LogicalForm(
        DialogueType.GET_MEMORY,
        filters=where(("has_name", Span(0, 2, 2))),
        answer_type="COUNT",
    )
    got = answer_get_memory(memory, form, memory.chat_texts(), grid, Pose(0, 1, 0))
    assert got == "2"


def test_get_memory_no_referent_raises():
    grid = flat_world()
    memory = AgentMemory()
    form = LogicalForm(DialogueType.GET_MEMORY, answer_type="NAME")
    with pytest.raises(NoReferent):
        answer_get_memory(memory, form, [""], grid, Pose(0, 3, 0, pitch=60))
