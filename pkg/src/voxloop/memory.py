"""Heuristic perception and the assistant's queryable object memory.

Perception finds the ground slab and connected block components and writes
them into memory as object nodes. Queries evaluate where-clause conjuncts
against node tags, with shape-name synonyms (plurals, box/cube) folded in.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .lf import DialogueType, Filters, LogicalForm, resolve_span
from .world import AIR, Pose, Position, VoxelGrid, look_target

FACE_NEIGHBORS: tuple[Position, ...] = (
    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
)

GROUND_OCCUPANCY = 0.9      # slab must cover at least this share of its layer
MATCH_OVERLAP = 0.5         # node identity is preserved above this overlap

# Name synonyms fold onto a canonical shape kind; plurals fold onto singulars.
SHAPE_SYNONYMS = {
    "box": "cube",
    "boxes": "cube",
    "ball": "sphere",
    "block": "cube",
}
_PLURALS = ("cubes", "spheres", "houses", "towers", "forts", "walls",
            "pyramids", "domes", "arches", "squares", "circles", "triangles",
            "rectangles", "rectanguloids", "holes", "moats", "pits", "trenches")
for _plural in _PLURALS:
    SHAPE_SYNONYMS[_plural] = _plural[:-1]
SHAPE_SYNONYMS["arches"] = "arch"


class NoReferent(Exception):
    pass


class EmptyMask(Exception):
    pass


def canonical_name(name: str) -> str:
    return SHAPE_SYNONYMS.get(name, name)


@dataclass
class MemoryNode:
    id: int
    kind: str  # object | chat | player | self
    tags: set[tuple[str, str]]
    voxels: frozenset[Position]
    created_tick: int

    def tag_values(self, pred: str) -> set[str]:
        return {v for p, v in self.tags if p == pred}


@dataclass(frozen=True)
class ChatRecord:
    index: int
    speaker: str  # player | agent
    text: str
    tick: int


def neighbors26(pos: Position) -> Iterable[Position]:
    x, y, z = pos
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx or dy or dz:
                    yield (x + dx, y + dy, z + dz)


def detect_ground(grid: VoxelGrid, occupancy: float = GROUND_OCCUPANCY) -> frozenset[Position]:
    """Occupied voxels of the lowest layer, if that layer is (mostly) a slab."""
    if not grid.cells:
        return frozenset()
    lowest = min(y for _, y, _ in grid.cells)
    layer = frozenset(p for p in grid.cells if p[1] == lowest)
    if len(layer) >= occupancy * grid.width * grid.length:
        return layer
    return frozenset()


def detect_components(grid: VoxelGrid, ground: frozenset[Position],
                      connectivity: int = 6) -> list[frozenset[Position]]:
    """Connected components of non-air, non-ground voxels, ordered by min position."""
    if connectivity not in (6, 26):
        raise ValueError("connectivity must be 6 or 26")
    remaining = set(grid.cells) - ground
    components = []
    while remaining:
        seed = min(remaining)
        queue = deque([seed])
        remaining.discard(seed)
        component = {seed}
        while queue:
            pos = queue.popleft()
            if connectivity == 6:
                adjacent = ((pos[0] + d[0], pos[1] + d[1], pos[2] + d[2]) for d in FACE_NEIGHBORS)
            else:
                adjacent = neighbors26(pos)
            for nxt in adjacent:
                if nxt in remaining:
                    remaining.discard(nxt)
                    component.add(nxt)
                    queue.append(nxt)
        components.append(frozenset(component))
    return sorted(components, key=min)


def color_of(grid: VoxelGrid, mask: Iterable[Position]) -> str:
    """Palette color of the modal block id in the mask; ties pick the lower id."""
    counts = Counter(grid.get(p) for p in mask if not grid.is_air(p))
    if not counts:
        raise EmptyMask("no occupied voxels in mask")
    best_id = max(counts, key=lambda i: (counts[i], -i))
    return grid.palette.color(best_id)


class AgentMemory:
    """Object/chat store owned by one session's agent."""

    def __init__(self):
        self.nodes: dict[int, MemoryNode] = {}
        self.chats: list[ChatRecord] = []
        self._next_id = 1

    def new_node(self, kind: str, tags: set, voxels: frozenset[Position], tick: int) -> MemoryNode:
        node = MemoryNode(self._next_id, kind, tags, voxels, tick)
        self._next_id += 1  # ids are never reused
        self.nodes[node.id] = node
        return node

    def object_nodes(self) -> list[MemoryNode]:
        return [n for n in sorted(self.nodes.values(), key=lambda n: n.id) if n.kind == "object"]

    def add_chat(self, speaker: str, text: str, tick: int) -> ChatRecord:
        record = ChatRecord(len(self.chats), speaker, text, tick)
        self.chats.append(record)
        return record

    def chat_texts(self) -> list[str]:
        return [c.text for c in self.chats]

    def node_at(self, pos: Position) -> Optional[MemoryNode]:
        for node in self.object_nodes():
            if pos in node.voxels:
                return node
        return None

    # --- perception --------------------------------------------------------

    def perceive(self, grid: VoxelGrid, tick: int, connectivity: int = 6) -> list[str]:
        """Refresh object nodes from the world; returns a mutation log.

        Excavation nodes (dug regions) are bookkeeping for FILL, not block
        components, so they are exempt from matching and retirement.
        """
        ground = detect_ground(grid)
        components = detect_components(grid, ground, connectivity)
        mutations: list[str] = []
        unmatched = {
            n.id for n in self.object_nodes() if ("has_tag", "excavation") not in n.tags
        }
        for component in components:
            best_id, best_overlap = None, 0.0
            for node_id in unmatched:
                node = self.nodes[node_id]
                overlap = len(component & node.voxels) / max(len(component), len(node.voxels))
                if overlap > best_overlap:
                    best_id, best_overlap = node_id, overlap
            if best_id is not None and best_overlap >= MATCH_OVERLAP:
                node = self.nodes[best_id]
                unmatched.discard(best_id)
                new_color = color_of(grid, component)
                if node.voxels != component:
                    node.voxels = component
                    node.tags = {(p, v) for p, v in node.tags if p != "has_colour"}
                    node.tags.add(("has_colour", new_color))
                    mutations.append(f"update node {node.id}")
            else:
                node = self.new_node(
                    "object",
                    {("has_colour", color_of(grid, component)), ("has_tag", "object")},
                    component,
                    tick,
                )
                mutations.append(f"add node {node.id}")
        for node_id in unmatched:
            del self.nodes[node_id]
            mutations.append(f"retire node {node_id}")
        return mutations

    # --- queries -----------------------------------------------------------

    def query(self, conjuncts: Sequence[tuple[str, str]]) -> list[MemoryNode]:
        """Object nodes satisfying every (predicate, value) conjunct, by id."""
        if not conjuncts:
            return []
        out = []
        for node in self.object_nodes():
            if all(self._matches(node, pred, value) for pred, value in conjuncts):
                out.append(node)
        return out

    @staticmethod
    def _matches(node: MemoryNode, pred: str, value: str) -> bool:
        if pred == "has_name":
            wanted = canonical_name(value)
            return any(canonical_name(v) == wanted for v in node.tag_values("has_name"))
        return value in node.tag_values(pred)


def resolve_conjuncts(filters: Filters, chats: Sequence[str]) -> list[tuple[str, str]]:
    """Span conjuncts resolved to plain strings against the chat history."""
    return [
        (pred, resolve_span(span, chats))
        for pred, span in filters.where_clause.conjuncts
    ]


def _gaze_referent(memory: AgentMemory, grid: VoxelGrid, player_pose: Pose) -> MemoryNode:
    target = look_target(player_pose, grid)
    if target is None:
        raise NoReferent("the player is not looking at anything")
    node = memory.node_at(target)
    if node is None:
        raise NoReferent("no remembered object under the player's gaze")
    return node


def _referent_for_memory_op(memory: AgentMemory, form: LogicalForm, chats: Sequence[str],
                            grid: VoxelGrid, player_pose: Pose) -> MemoryNode:
    if form.filters is not None:
        matches = memory.query(resolve_conjuncts(form.filters, chats))
        if not matches:
            raise NoReferent("no object matches the description")
        return matches[0]
    return _gaze_referent(memory, grid, player_pose)


def apply_put_memory(memory: AgentMemory, form: LogicalForm, chats: Sequence[str],
                     grid: VoxelGrid, player_pose: Pose) -> MemoryNode:
    """Attach the form's tag triple to the referenced (or gazed-at) object."""
    if form.dialogue_type is not DialogueType.PUT_MEMORY or form.upsert is None:
        raise ValueError("not a PUT_MEMORY form")
    node = _referent_for_memory_op(memory, form, chats, grid, player_pose)
    pred, span = form.upsert
    node.tags.add((pred, resolve_span(span, chats)))
    return node


def answer_get_memory(memory: AgentMemory, form: LogicalForm, chats: Sequence[str],
                      grid: VoxelGrid, player_pose: Pose) -> str:
    """Answer text for a memory query: a name or a decimal count."""
    if form.dialogue_type is not DialogueType.GET_MEMORY:
        raise ValueError("not a GET_MEMORY form")
    if form.answer_type == "COUNT":
        if form.filters is None:
            raise NoReferent("count query without filters")
        return str(len(memory.query(resolve_conjuncts(form.filters, chats))))
    node = _referent_for_memory_op(memory, form, chats, grid, player_pose)
    names = sorted(node.tag_values("has_name"))
    if names:
        return names[0]
    colors = sorted(node.tag_values("has_colour"))
    return f"{colors[0]} {node.kind}" if colors else node.kind
