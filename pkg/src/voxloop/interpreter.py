"""Controller and task executor: logical forms become tasks that tick the world.

Reference objects resolve against memory first and fall back to the vision
segmenter; ambiguity triggers a pointing clarification dialogue. Every task
accumulates a delta log so UNDO can restore the pre-task world.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import vision
from .lf import (
    ActionType,
    DialogueType,
    Filters,
    LogicalForm,
    RelativeDirection,
)
from .memory import (
    AgentMemory,
    NoReferent,
    canonical_name,
    color_of,
    detect_components,
    detect_ground,
    resolve_conjuncts,
)
from .world import (
    AIR,
    Blocked,
    OutOfBounds,
    Pose,
    Position,
    Region,
    StaleDelta,
    VoxelGrid,
    WorldDelta,
    destroy_block,
    place_block,
    point_at,
    revert_delta,
    step_agent,
)


class UnknownSchematic(Exception):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class NoFreeVoxel(Exception):
    pass


class NoPendingClarification(Exception):
    pass


@dataclass
class Ambiguous(Exception):
    candidate_ids: list[int]


DEFAULT_BUILD_MATERIAL = 2  # gold
DEFAULT_SCHEMATIC_SIZE = 3

# Buildable names -> (shape kind, size parameters).
SCHEMATIC_LEXICON: dict[str, tuple[str, tuple[int, ...]]] = {
    "box": ("cube", (3,)),
    "cube": ("cube", (3,)),
    "sphere": ("sphere", (1,)),
    "ball": ("sphere", (1,)),
    "pyramid": ("pyramid", (5,)),
    "tower": ("rectanguloid", (2, 5, 2)),
    "wall": ("rectanguloid", (4, 3, 1)),
    "house": ("rectanguloid", (4, 3, 4)),
    "fort": ("rectanguloid", (5, 2, 5)),
    "dome": ("dome", (2,)),
    "arch": ("arch", (3, 3)),
    "square": ("square", (3,)),
    "circle": ("circle", (2,)),
    "triangle": ("triangle", (3,)),
    "rectangle": ("rectangle", (3, 2)),
    "rectanguloid": ("rectanguloid", (3, 2, 2)),
}

# Excavation names -> footprint (width, length) dug one layer deep.
DIG_LEXICON: dict[str, tuple[int, int]] = {
    "hole": (2, 2),
    "pit": (2, 2),
    "moat": (1, 4),
    "trench": (1, 4),
    "tunnel": (1, 3),
}

DANCE_STEPS: tuple[Position, ...] = (
    (1, 0, 0), (1, 0, 0), (0, 0, 1), (0, 0, 1),
    (-1, 0, 0), (-1, 0, 0), (0, 0, -1), (0, 0, -1),
)


@dataclass
class Clarification:
    question: str
    candidate_ids: list[int]
    form: LogicalForm
    text: str = ""
    index: int = 0

    @property
    def current(self) -> int:
        return self.candidate_ids[self.index]


class Task:
    kind: str = "task"

    def __init__(self):
        self.status = "queued"
        self.delta_log: list[WorldDelta] = []

    def record(self, delta: WorldDelta) -> None:
        if self.status not in ("queued", "running"):
            raise RuntimeError(f"{self.kind} task is {self.status}")
        self.delta_log.append(delta)

    def start(self) -> None:
        if self.status == "queued":
            self.status = "running"

    def step(self, agent: "Agent") -> None:
        raise NotImplementedError

    def fail(self, agent: "Agent", reason: str) -> None:
        self.status = "failed"
        agent.chat(f"I couldn't finish that: {reason}")


class MoveTask(Task):
    kind = "move"

    def __init__(self, target: Position):
        super().__init__()
        self.target = target
        self.path: Optional[list[Position]] = None

    def step(self, agent: "Agent") -> None:
        self.start()
        if agent.pose.position == self.target:
            self.status = "finished"
            return
        if not self.path:
            self.path = bfs_path(agent.world, agent.pose.position, self.target)
            if self.path is None:
                self.fail(agent, "I can't reach that spot")
                return
        nxt = self.path.pop(0)
        direction = tuple(n - c for n, c in zip(nxt, agent.pose.position))
        try:
            agent.pose = step_agent(agent.pose, agent.world, direction)
        except (Blocked, OutOfBounds):
            self.path = None  # world changed under us; re-plan next tick
            return
        if agent.pose.position == self.target:
            self.status = "finished"


class BuildTask(Task):
    kind = "build"

    def __init__(self, blocks: list[Position], material: int, name: str):
        super().__init__()
        # bottom-up, row-major placement order
        self.blocks = sorted(blocks, key=lambda p: (p[1], p[2], p[0]))
        self.material = material
        self.name = name
        self.placed: list[Position] = []

    def step(self, agent: "Agent") -> None:
        self.start()
        while self.blocks:
            pos = self.blocks.pop(0)
            if not agent.world.in_bounds(pos) or not agent.world.is_air(pos):
                continue  # skip cells we cannot place into
            self.record(place_block(agent.world, pos, self.material))
            self.placed.append(pos)
            break
        if not self._placeable_remaining(agent):
            self.status = "finished"
            agent.perceive()
            if self.placed:
                node = agent.memory.node_at(self.placed[0])
                if node is not None:
                    node.tags.add(("has_name", canonical_name(self.name)))

    def _placeable_remaining(self, agent: "Agent") -> bool:
        return any(
            agent.world.in_bounds(p) and agent.world.is_air(p) for p in self.blocks
        )


class DestroyTask(Task):
    kind = "destroy"

    def __init__(self, positions: Sequence[Position]):
        super().__init__()
        # top-down removal
        self.positions = sorted(positions, key=lambda p: (-p[1], p[2], p[0]))

    def step(self, agent: "Agent") -> None:
        self.start()
        while self.positions:
            pos = self.positions.pop(0)
            if agent.world.is_air(pos):
                continue
            self.record(destroy_block(agent.world, pos))
            break
        if not any(not agent.world.is_air(p) for p in self.positions):
            self.status = "finished"
            agent.perceive()


class DigTask(Task):
    kind = "dig"

    def __init__(self, positions: Sequence[Position], name: str):
        super().__init__()
        self.positions = sorted(positions)
        self.dug: list[Position] = []
        self.name = name

    def step(self, agent: "Agent") -> None:
        self.start()
        while self.positions:
            pos = self.positions.pop(0)
            if agent.world.is_air(pos):
                continue
            self.record(destroy_block(agent.world, pos))
            self.dug.append(pos)
            break
        if not any(not agent.world.is_air(p) for p in self.positions):
            self.status = "finished"
            if self.dug:
                agent.memory.new_node(
                    "object",
                    {("has_name", canonical_name(self.name)), ("has_tag", "excavation")},
                    frozenset(self.dug),
                    agent.tick_count,
                )


class FillTask(Task):
    kind = "fill"

    def __init__(self, positions: Sequence[Position], material: int, node_id: Optional[int]):
        super().__init__()
        self.positions = sorted(positions)
        self.material = material
        self.node_id = node_id

    def step(self, agent: "Agent") -> None:
        self.start()
        while self.positions:
            pos = self.positions.pop(0)
            if not agent.world.in_bounds(pos) or not agent.world.is_air(pos):
                continue
            self.record(place_block(agent.world, pos, self.material))
            break
        if not any(
            agent.world.in_bounds(p) and agent.world.is_air(p) for p in self.positions
        ):
            self.status = "finished"
            if self.node_id is not None:
                agent.memory.nodes.pop(self.node_id, None)
            agent.perceive()


class SpawnTask(Task):
    kind = "spawn"

    def __init__(self, pos: Position, material: int, name: str):
        super().__init__()
        self.pos = pos
        self.material = material
        self.name = name

    def step(self, agent: "Agent") -> None:
        self.start()
        if not agent.world.in_bounds(self.pos) or not agent.world.is_air(self.pos):
            self.fail(agent, "there is no room for it")
            return
        self.record(place_block(agent.world, self.pos, self.material))
        self.status = "finished"
        agent.perceive()
        node = agent.memory.node_at(self.pos)
        if node is not None:
            node.tags.add(("has_name", canonical_name(self.name)))


class DanceTask(Task):
    kind = "dance"

    def __init__(self):
        super().__init__()
        self.steps = list(DANCE_STEPS)

    def step(self, agent: "Agent") -> None:
        self.start()
        if not self.steps:
            self.status = "finished"
            return
        direction = self.steps.pop(0)
        try:
            agent.pose = step_agent(agent.pose, agent.world, direction)
        except (Blocked, OutOfBounds):
            pass  # skipped beats keep the rhythm
        if not self.steps:
            self.status = "finished"


class GetTask(Task):
    kind = "get"

    def __init__(self, node_id: int, target: Position):
        super().__init__()
        self.node_id = node_id
        self.move = MoveTask(target)

    def step(self, agent: "Agent") -> None:
        self.start()
        if self.move.status not in ("finished", "failed"):
            self.move.step(agent)
            self.delta_log = self.move.delta_log
            return
        if self.move.status == "failed":
            self.fail(agent, "I can't get to it")
            return
        node = agent.memory.nodes.get(self.node_id)
        if node is None:
            self.fail(agent, "it is gone")
            return
        node.tags.add(("has_tag", "carried"))
        self.status = "finished"


class UndoTask(Task):
    kind = "undo"

    def step(self, agent: "Agent") -> None:
        self.start()
        target = agent.last_undoable()
        if target is None:
            self.status = "finished"
            agent.chat("There is nothing to undo.")
            return
        try:
            for delta in reversed(target.delta_log):
                revert_delta(agent.world, delta)
                self.record(delta.inverted())
        except StaleDelta:
            self.fail(agent, "the world has changed too much to undo that")
            return
        self.status = "finished"
        agent.perceive()


def bfs_path(grid: VoxelGrid, start: Position, target: Position,
             limit: int = 200000) -> Optional[list[Position]]:
    """Shortest path through air cells (6-connected), or None."""
    if start == target:
        return []
    if not grid.in_bounds(target) or not grid.is_air(target):
        return None
    from .memory import FACE_NEIGHBORS

    seen = {start}
    queue = deque([(start, [])])
    while queue and len(seen) < limit:
        pos, path = queue.popleft()
        for d in FACE_NEIGHBORS:
            nxt = (pos[0] + d[0], pos[1] + d[1], pos[2] + d[2])
            if nxt in seen or not grid.in_bounds(nxt) or not grid.is_air(nxt):
                continue
            if nxt == target:
                return path + [nxt]
            seen.add(nxt)
            queue.append((nxt, path + [nxt]))
    return None


def footprint(voxels: Sequence[Position]) -> tuple[Position, Position]:
    xs = [p[0] for p in voxels]
    ys = [p[1] for p in voxels]
    zs = [p[2] for p in voxels]
    return (min(xs), min(ys), min(zs)), (max(xs), max(ys), max(zs))


def _snap_axis(dx: float, dz: float) -> Position:
    if abs(dx) >= abs(dz):
        return (1 if dx >= 0 else -1, 0, 0)
    return (0, 0, 1 if dz >= 0 else -1)


def _horizontal(pose: Pose, quarter_turns: int) -> Position:
    """Speaker-frame horizontal axis: 0 ahead, +1 left, -1 right, 2 behind."""
    import math

    yaw = math.radians(pose.yaw) + quarter_turns * math.pi / 2.0
    return _snap_axis(math.cos(yaw), math.sin(yaw))


def around_ring(voxels: Sequence[Position]) -> list[Position]:
    """Ring one voxel outside the xz-footprint, at the footprint's base layer."""
    (x0, y0, z0), (x1, _, z1) = footprint(voxels)
    ring = []
    for x in range(x0 - 1, x1 + 2):
        for z in range(z0 - 1, z1 + 2):
            if x in (x0 - 1, x1 + 1) or z in (z0 - 1, z1 + 1):
                ring.append((x, y0, z))
    return ring


def resolve_location(direction: RelativeDirection, referent_voxels: Optional[Sequence[Position]],
                     speaker_pose: Pose, grid: VoxelGrid) -> Position:
    """Concrete target voxel for a relative direction (AROUND uses around_ring)."""
    if direction is RelativeDirection.AROUND:
        raise ValueError("AROUND yields a ring, not a single target")
    if referent_voxels is None:
        # relative to the speaker themselves
        base = speaker_pose.position
        if direction is RelativeDirection.NEAR:
            return _nearest_free_adjacent(grid, [base], base)
        referent_voxels = [base]
    (x0, y0, z0), (x1, y1, z1) = footprint(referent_voxels)
    cx, cz = (x0 + x1) // 2, (z0 + z1) // 2
    if direction is RelativeDirection.UP:
        return (cx, y1 + 1, cz)
    if direction is RelativeDirection.DOWN:
        return (cx, max(y0 - 1, 0), cz)
    if direction is RelativeDirection.EXACT:
        return (cx, y0, cz)
    if direction is RelativeDirection.NEAR:
        return _nearest_free_adjacent(grid, referent_voxels, speaker_pose.position)
    turns = {
        RelativeDirection.FRONT: 2,  # between speaker and referent
        RelativeDirection.BACK: 0,
        RelativeDirection.LEFT: 1,
        RelativeDirection.RIGHT: -1,
    }[direction]
    axis = _horizontal(speaker_pose, turns)
    if axis[0] > 0:
        target = (x1 + 1, y0, cz)
    elif axis[0] < 0:
        target = (x0 - 1, y0, cz)
    elif axis[2] > 0:
        target = (cx, y0, z1 + 1)
    else:
        target = (cx, y0, z0 - 1)
    return _free_at_or_above(grid, target)


def _free_at_or_above(grid: VoxelGrid, pos: Position, tries: int = 4) -> Position:
    x, y, z = pos
    for dy in range(tries):
        candidate = (x, y + dy, z)
        if grid.in_bounds(candidate) and grid.is_air(candidate):
            return candidate
    raise NoFreeVoxel(f"no free voxel at or above {pos}")


def _nearest_free_adjacent(grid: VoxelGrid, voxels: Sequence[Position], near: Position) -> Position:
    from .memory import FACE_NEIGHBORS

    body = set(voxels)
    candidates = set()
    for pos in voxels:
        for d in FACE_NEIGHBORS:
            nxt = (pos[0] + d[0], pos[1] + d[1], pos[2] + d[2])
            if nxt not in body and grid.in_bounds(nxt) and grid.is_air(nxt):
                candidates.add(nxt)
    if not candidates:
        raise NoFreeVoxel("the object is fully enclosed")
    return min(candidates, key=lambda p: (sum(abs(a - b) for a, b in zip(p, near)), p))


@dataclass
class ResolvedReferent:
    node_id: int
    voxels: frozenset[Position]


def resolve_reference_object(filters: Filters, memory: AgentMemory, grid: VoxelGrid,
                             seg_model, chats: Sequence[str],
                             forced_node: Optional[int] = None,
                             trace: Optional[list] = None) -> ResolvedReferent:
    """Memory lookup first; single miss falls through to the vision segmenter.

    When the segmenter is consulted, (query text, chosen mask) is appended to
    `trace` so callers can audit vision decisions.
    """
    if forced_node is not None:
        node = memory.nodes[forced_node]
        return ResolvedReferent(node.id, node.voxels)
    conjuncts = resolve_conjuncts(filters, chats)
    matches = memory.query(conjuncts)
    if len(matches) == 1:
        return ResolvedReferent(matches[0].id, matches[0].voxels)
    if len(matches) > 1:
        raise Ambiguous([n.id for n in matches])
    if seg_model is None:
        raise NoReferent("nothing matches and no vision model is available")
    values = dict(conjuncts)
    text_parts = [values[p] for p in ("has_colour", "has_name", "has_tag") if p in values]
    query_text = " ".join(text_parts)
    predicted = vision.predict_mask(seg_model, grid, query_text)
    chosen: frozenset = frozenset()
    if predicted:
        ground = detect_ground(grid)
        components = detect_components(grid, ground)
        best, best_hit = None, 0
        for component in components:
            hit = len(component & predicted)
            if hit > best_hit:
                best, best_hit = component, hit
        if best is not None:
            chosen = best
    if trace is not None:
        trace.append((query_text, chosen))
    if chosen:
        tags = {("has_tag", "object"), ("has_colour", color_of(grid, chosen))}
        if "has_name" in values:
            tags.add(("has_name", canonical_name(values["has_name"])))
        node = memory.new_node("object", tags, chosen, 0)
        return ResolvedReferent(node.id, node.voxels)
    raise NoReferent("neither memory nor vision could find it")


@dataclass
class InterpretFailure(Exception):
    message: str


def _schematic_blocks(name: str, base_target: Position, material: int,
                      grid: VoxelGrid) -> list[Position]:
    """Shape voxels for a named schematic, grounded with its base at base_target."""
    canonical = canonical_name(name)
    if canonical not in SCHEMATIC_LEXICON:
        raise UnknownSchematic(name)
    kind, size = SCHEMATIC_LEXICON[canonical]
    relative = vision.shape_positions(vision.ShapeSpec(kind, size, (0, 0, 0), material))
    (x0, y0, z0), (x1, _, z1) = footprint(sorted(relative))
    cx, cz = (x0 + x1) // 2, (z0 + z1) // 2
    bx, by, bz = base_target
    return [(x - cx + bx, y - y0 + by, z - cz + bz) for x, y, z in relative]


def _schematic_name_and_color(action_schematic, chats: Sequence[str]) -> tuple[str, Optional[str]]:
    values = dict(resolve_conjuncts(action_schematic.filters, chats))
    return values.get("has_name", ""), values.get("has_colour")


def _material_for(color: Optional[str], text: str, grid: VoxelGrid) -> int:
    if color:
        found = grid.palette.id_for_color(color)
        if found:
            return found
    from .lf import tokenize

    for token in tokenize(text):
        found = grid.palette.id_for_color(token)
        if found:
            return found
    return DEFAULT_BUILD_MATERIAL


def _ground_level(grid: VoxelGrid) -> int:
    ground = detect_ground(grid)
    if ground:
        return max(y for _, y, _ in ground) + 1
    return 0


def _ground_material(grid: VoxelGrid) -> int:
    ground = detect_ground(grid)
    if not ground:
        return DEFAULT_BUILD_MATERIAL
    counts = Counter(grid.get(p) for p in ground)
    return max(counts, key=lambda i: (counts[i], -i))


def _in_front_of(pose: Pose, grid: VoxelGrid, distance: int = 3) -> Position:
    ahead = _horizontal(pose, 0)
    x = min(max(pose.x + ahead[0] * distance, 0), grid.width - 1)
    z = min(max(pose.z + ahead[2] * distance, 0), grid.length - 1)
    return (x, _ground_level(grid), z)


def interpret(form: LogicalForm, memory: AgentMemory, grid: VoxelGrid, chats: Sequence[str],
              agent_pose: Pose, player_pose: Pose, seg_model=None,
              forced_node: Optional[int] = None,
              vision_trace: Optional[list] = None) -> list[Task]:
    """Turn a command form into concrete tasks.

    Raises Ambiguous (with candidates) for clarification, InterpretFailure /
    UnknownSchematic / NoReferent for failures the agent chats about.
    """
    if form.dialogue_type is not DialogueType.HUMAN_GIVE_COMMAND:
        raise ValueError("interpret only handles command forms")
    command_text = chats[-1] if chats else ""
    tasks: list[Task] = []
    for action in form.action_sequence:
        atype = action.action_type
        if atype is ActionType.STOP:
            tasks.append(StopTask())
            continue
        if atype is ActionType.RESUME:
            tasks.append(ResumeTask())
            continue
        if atype is ActionType.UNDO:
            tasks.append(UndoTask())
            continue
        if atype is ActionType.FREEBUILD:
            raise InterpretFailure("I don't know how to freebuild yet, sorry.")
        if atype is ActionType.DANCE:
            tasks.append(DanceTask())
            continue

        referent: Optional[ResolvedReferent] = None
        if action.reference_object is not None:
            referent = resolve_reference_object(
                action.reference_object.filters, memory, grid, seg_model, chats,
                forced_node, vision_trace)
        loc_referent: Optional[ResolvedReferent] = None
        if action.location is not None and action.location.reference_object is not None:
            loc_referent = resolve_reference_object(
                action.location.reference_object.filters, memory, grid, seg_model, chats,
                forced_node, vision_trace)

        if atype is ActionType.MOVE:
            if action.location is None:
                raise InterpretFailure("Where should I go?")
            voxels = loc_referent.voxels if loc_referent else None
            target = resolve_location(
                action.location.relative_direction, voxels, player_pose, grid)
            tasks.append(MoveTask(target))
        elif atype in (ActionType.BUILD, ActionType.SPAWN):
            if action.schematic is None:
                raise InterpretFailure(
                    "What should I build?" if atype is ActionType.BUILD else "What should I spawn?")
            name, color = _schematic_name_and_color(action.schematic, chats)
            material = _material_for(color, command_text, grid)
            if action.location is not None:
                voxels = loc_referent.voxels if loc_referent else None
                base = resolve_location(
                    action.location.relative_direction, voxels, player_pose, grid)
            else:
                base = _in_front_of(agent_pose, grid)
            if atype is ActionType.SPAWN:
                if canonical_name(name) not in SCHEMATIC_LEXICON:
                    raise UnknownSchematic(name)
                tasks.append(SpawnTask(_free_at_or_above(grid, base), material, name))
            else:
                blocks = _schematic_blocks(name, base, material, grid)
                tasks.append(BuildTask(blocks, material, name))
        elif atype is ActionType.DESTROY:
            if referent is None:
                raise InterpretFailure("What should I destroy?")
            tasks.append(DestroyTask(sorted(referent.voxels)))
        elif atype is ActionType.GET:
            if referent is None:
                raise InterpretFailure("What should I get?")
            target = _nearest_free_adjacent(grid, sorted(referent.voxels), agent_pose.position)
            tasks.append(GetTask(referent.node_id, target))
        elif atype is ActionType.DIG:
            name = "hole"
            if action.schematic is not None:
                name, _ = _schematic_name_and_color(action.schematic, chats)
            ground_y = max(_ground_level(grid) - 1, 0)
            if action.location is not None and action.location.relative_direction is RelativeDirection.AROUND:
                if loc_referent is None:
                    raise InterpretFailure("Around what?")
                cells = [(x, ground_y, z) for x, _, z in around_ring(sorted(loc_referent.voxels))]
            else:
                if action.location is not None:
                    voxels = loc_referent.voxels if loc_referent else None
                    anchor = resolve_location(
                        action.location.relative_direction, voxels, player_pose, grid)
                else:
                    anchor = _in_front_of(agent_pose, grid)
                w, l = DIG_LEXICON.get(canonical_name(name), (2, 2))
                cells = [
                    (anchor[0] + dx, ground_y, anchor[2] + dz)
                    for dx in range(w) for dz in range(l)
                ]
            cells = [c for c in cells if grid.in_bounds(c)]
            tasks.append(DigTask(cells, name))
        elif atype is ActionType.FILL:
            if referent is None:
                raise InterpretFailure("What should I fill?")
            tasks.append(FillTask(sorted(referent.voxels), _ground_material(grid), referent.node_id))
        else:
            raise InterpretFailure(f"I don't know how to {atype.value.lower()} yet.")
    return tasks


class StopTask(Task):
    kind = "stop"

    def step(self, agent: "Agent") -> None:
        self.start()
        agent.stop_running()
        self.status = "finished"


class ResumeTask(Task):
    kind = "resume"

    def step(self, agent: "Agent") -> None:
        self.start()
        if agent.last_stopped is None:
            agent.chat("There is nothing to resume.")
        else:
            agent.queue.append(agent.last_stopped)
            agent.last_stopped.status = "running"
            agent.last_stopped = None
        self.status = "finished"


class Agent:
    """One embodied assistant: world, memory, pose, and a task queue."""

    def __init__(self, world: VoxelGrid, pose: Pose, seg_model=None, event_sink=None):
        self.world = world
        self.pose = pose
        self.seg_model = seg_model
        self.memory = AgentMemory()
        self.queue: deque[Task] = deque()
        self.done_log: list[Task] = []
        self.last_stopped: Optional[Task] = None
        self.clarification: Optional[Clarification] = None
        self.tick_count = 0
        self.event_sink = event_sink or (lambda kind, payload: None)
        self.vision_referents: list[tuple[str, frozenset]] = []

    # --- plumbing -----------------------------------------------------------

    def chat(self, text: str) -> None:
        self.memory.add_chat("agent", text, self.tick_count)
        self.event_sink("chat", {"speaker": "agent", "text": text})

    def perceive(self) -> None:
        self.memory.perceive(self.world, self.tick_count)

    def last_undoable(self) -> Optional[Task]:
        """The most recent completed world-affecting task (its delta may be empty)."""
        for task in reversed(self.done_log):
            if task.status in ("finished", "failed") and task.kind not in ("stop", "resume"):
                return task
        return None

    def stop_running(self) -> None:
        stopped = None
        if self.queue:
            head = self.queue[0]
            if head.status in ("queued", "running") and head.kind not in ("stop", "resume"):
                stopped = head
                self.queue.popleft()
        if stopped is not None:
            stopped.status = "stopped"
            self.last_stopped = stopped
            self.chat("Stopping.")
        else:
            self.chat("Nothing is running.")

    # --- command intake -----------------------------------------------------

    def submit_form(self, form: LogicalForm, player_pose: Pose,
                    text: Optional[str] = None) -> str:
        """Dispatch a parsed form; returns 'tasks' | 'clarify' | 'answered' | 'failed'.

        Spans in the form address the current utterance: message 0 is `text`
        (or, when omitted, the latest recorded chat).
        """
        if text is None:
            text = self.memory.chats[-1].text if self.memory.chats else ""
        chats = [text]
        self.vision_referents = []
        if form.dialogue_type is DialogueType.GET_MEMORY:
            self.perceive()
            try:
                from .memory import answer_get_memory

                self.chat(answer_get_memory(self.memory, form, chats, self.world, player_pose))
                return "answered"
            except NoReferent:
                self.chat("I don't know.")
                return "failed"
        if form.dialogue_type is DialogueType.PUT_MEMORY:
            self.perceive()
            try:
                from .memory import apply_put_memory

                apply_put_memory(self.memory, form, chats, self.world, player_pose)
                self.chat("Got it.")
                return "answered"
            except NoReferent:
                self.chat("I don't know which object you mean.")
                return "failed"
        # command: stop is honored immediately, even while a task runs
        if (len(form.action_sequence) == 1
                and form.action_sequence[0].action_type is ActionType.STOP):
            self.stop_running()
            return "tasks"
        self.perceive()
        try:
            tasks = interpret(form, self.memory, self.world, chats,
                              self.pose, player_pose, self.seg_model,
                              vision_trace=self.vision_referents)
        except Ambiguous as amb:
            self.clarification = Clarification(
                "Do you mean this one?", amb.candidate_ids, form, text)
            self._point_at_candidate()
            return "clarify"
        except UnknownSchematic as e:
            self.chat(f"I don't know how to make a {e.name}.")
            return "failed"
        except (InterpretFailure,) as e:
            self.chat(e.message)
            return "failed"
        except (NoReferent, NoFreeVoxel):
            self.chat("I can't find what you are referring to.")
            return "failed"
        self.queue.extend(tasks)
        return "tasks"

    def _point_at_candidate(self) -> None:
        assert self.clarification is not None
        node = self.memory.nodes[self.clarification.current]
        lo, hi = footprint(sorted(node.voxels))
        event = point_at(self.world, Region(lo, hi))
        self.event_sink("point", {"lo": list(event.region.lo), "hi": list(event.region.hi),
                                  "duration": event.duration})
        self.chat(self.clarification.question)

    def answer_clarification(self, yes: bool, player_pose: Pose) -> str:
        if self.clarification is None:
            raise NoPendingClarification("no question is pending")
        pending = self.clarification
        if yes:
            self.clarification = None
            chosen = pending.current
            try:
                tasks = interpret(pending.form, self.memory, self.world, [pending.text],
                                  self.pose, player_pose, self.seg_model, forced_node=chosen)
            except (InterpretFailure, UnknownSchematic, NoReferent, NoFreeVoxel, Ambiguous):
                self.chat("I can't do that after all, sorry.")
                return "failed"
            self.queue.extend(tasks)
            return "tasks"
        pending.index += 1
        if pending.index >= len(pending.candidate_ids):
            self.clarification = None
            self.chat("I don't know which one you meant, sorry.")
            return "failed"
        self._point_at_candidate()
        return "clarify"

    # --- execution ----------------------------------------------------------

    def tick(self) -> bool:
        """Advance the head task one atomic step; True if any work happened."""
        self.tick_count += 1
        if self.clarification is not None or not self.queue:
            return False
        head = self.queue[0]
        before = len(head.delta_log)
        head.step(self)
        for delta in head.delta_log[before:]:
            self.event_sink("delta", {"entries": [
                [list(p), b, a] for p, b, a in delta.entries]})
        self.event_sink("pose", {"agent": [self.pose.x, self.pose.y, self.pose.z,
                                           self.pose.pitch, self.pose.yaw]})
        if head.status in ("finished", "failed"):
            self.queue.popleft()
            self.done_log.append(head)
        elif head.status == "stopped":
            if self.queue and self.queue[0] is head:
                self.queue.popleft()
        return True

    def run_until_idle(self, max_ticks: int = 2000) -> int:
        ticks = 0
        while self.queue and self.clarification is None and ticks < max_ticks:
            self.tick()
            ticks += 1
        return ticks

    @property
    def busy(self) -> bool:
        return bool(self.queue)
