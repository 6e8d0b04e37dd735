"""Deterministic 3D voxel world: blocks, poses, reversible edits, pointing, gaze rays.

Coordinate convention: positions are (x, y, z) integer voxel coordinates with
y vertical. Yaw 0 faces +x and yaw 90 faces +z; pitch is positive looking up.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional

AIR = 0

Position = tuple[int, int, int]

AXIS_STEPS: tuple[Position, ...] = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)

DEFAULT_DIMS = (64, 48, 64)  # (width, height, length) = extents along x, y, z
DEFAULT_POINT_DURATION = 2  # ticks
DEFAULT_MAX_GAZE_RANGE = 32.0


class WorldError(Exception):
    """Base class for world mutation failures."""


class OutOfBounds(WorldError):
    pass


class Occupied(WorldError):
    pass


class NothingThere(WorldError):
    pass


class Blocked(WorldError):
    pass


class StaleDelta(WorldError):
    """A delta's recorded cell contents no longer match the grid."""


@dataclass(frozen=True)
class PaletteEntry:
    id: int
    name: str
    color: str


# 16 block types. Gold is the yellow one.
DEFAULT_PALETTE: tuple[PaletteEntry, ...] = (
    PaletteEntry(1, "white_block", "white"),
    PaletteEntry(2, "gold_block", "yellow"),
    PaletteEntry(3, "red_block", "red"),
    PaletteEntry(4, "blue_block", "blue"),
    PaletteEntry(5, "green_block", "green"),
    PaletteEntry(6, "orange_block", "orange"),
    PaletteEntry(7, "purple_block", "purple"),
    PaletteEntry(8, "pink_block", "pink"),
    PaletteEntry(9, "black_block", "black"),
    PaletteEntry(10, "gray_block", "gray"),
    PaletteEntry(11, "brown_block", "brown"),
    PaletteEntry(12, "cyan_block", "cyan"),
    PaletteEntry(13, "lime_block", "lime"),
    PaletteEntry(14, "magenta_block", "magenta"),
    PaletteEntry(15, "teal_block", "teal"),
    PaletteEntry(16, "tan_block", "tan"),
)


class Palette:
    """Mapping from block ids to (name, color) entries. Id 0 is always air."""

    def __init__(self, entries: tuple[PaletteEntry, ...] = DEFAULT_PALETTE):
        self.entries = tuple(entries)
        self._by_id = {e.id: e for e in self.entries}
        if 0 in self._by_id:
            raise ValueError("palette may not define id 0 (air)")

    def __contains__(self, block_id: int) -> bool:
        return block_id in self._by_id

    def entry(self, block_id: int) -> PaletteEntry:
        return self._by_id[block_id]

    def color(self, block_id: int) -> str:
        return self._by_id[block_id].color

    def id_for_color(self, color: str) -> Optional[int]:
        for e in self.entries:
            if e.color == color:
                return e.id
        return None

    def to_list(self) -> list[list]:
        return [[e.id, e.name, e.color] for e in self.entries]

    @classmethod
    def from_list(cls, rows: list) -> "Palette":
        return cls(tuple(PaletteEntry(int(i), str(n), str(c)) for i, n, c in rows))


@dataclass(frozen=True)
class Pose:
    """Agent/player pose: voxel position plus view angles in degrees."""

    x: int
    y: int
    z: int
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.pitch <= 90.0:
            raise ValueError(f"pitch {self.pitch} outside [-90, 90]")
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "yaw", float(self.yaw) % 360.0)

    @property
    def position(self) -> Position:
        return (self.x, self.y, self.z)

    def direction(self) -> tuple[float, float, float]:
        """Unit gaze vector; yaw 0 -> +x, yaw 90 -> +z, pitch 90 -> +y."""
        p = math.radians(self.pitch)
        w = math.radians(self.yaw)
        return (math.cos(p) * math.cos(w), math.sin(p), math.cos(p) * math.sin(w))


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectanguloid given by two inclusive corner positions."""

    corner_a: Position
    corner_b: Position

    @property
    def lo(self) -> Position:
        return tuple(min(a, b) for a, b in zip(self.corner_a, self.corner_b))

    @property
    def hi(self) -> Position:
        return tuple(max(a, b) for a, b in zip(self.corner_a, self.corner_b))

    def normalized(self) -> "Region":
        return Region(self.lo, self.hi)

    def positions(self) -> Iterator[Position]:
        (x0, y0, z0), (x1, y1, z1) = self.lo, self.hi
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                for z in range(z0, z1 + 1):
                    yield (x, y, z)


@dataclass(frozen=True)
class WorldDelta:
    """Ordered record of cell changes, each (position, before, after)."""

    entries: tuple[tuple[Position, int, int], ...]

    def __post_init__(self):
        for pos, before, after in self.entries:
            if before == after:
                raise ValueError(f"no-op delta entry at {pos}")

    def inverted(self) -> "WorldDelta":
        return WorldDelta(tuple((p, a, b) for p, b, a in reversed(self.entries)))


@dataclass(frozen=True)
class PointEvent:
    region: Region
    duration: int


class VoxelGrid:
    """Sparse voxel storage; cell id 0 (air) is never stored explicitly."""

    def __init__(self, dims: Position = DEFAULT_DIMS, palette: Palette | None = None):
        w, h, l = dims
        if w <= 0 or h <= 0 or l <= 0:
            raise ValueError("grid dimensions must be positive")
        self.dims: Position = (int(w), int(h), int(l))
        self.palette = palette or Palette()
        self.cells: dict[Position, int] = {}

    @property
    def width(self) -> int:
        return self.dims[0]

    @property
    def height(self) -> int:
        return self.dims[1]

    @property
    def length(self) -> int:
        return self.dims[2]

    def in_bounds(self, pos: Position) -> bool:
        x, y, z = pos
        w, h, l = self.dims
        return 0 <= x < w and 0 <= y < h and 0 <= z < l

    def get(self, pos: Position) -> int:
        return self.cells.get(pos, AIR)

    def is_air(self, pos: Position) -> bool:
        return pos not in self.cells

    def _set(self, pos: Position, block_id: int) -> None:
        if block_id == AIR:
            self.cells.pop(pos, None)
        else:
            if block_id not in self.palette:
                raise ValueError(f"block id {block_id} not in palette")
            self.cells[pos] = block_id

    def occupied(self) -> set[Position]:
        return set(self.cells)

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.dims, self.palette)
        g.cells = dict(self.cells)
        return g

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VoxelGrid)
            and self.dims == other.dims
            and self.cells == other.cells
        )


def place_block(grid: VoxelGrid, pos: Position, block_id: int) -> WorldDelta:
    """Place a block into an empty cell; returns the one-entry delta."""
    if not grid.in_bounds(pos):
        raise OutOfBounds(f"{pos} outside {grid.dims}")
    if block_id == AIR:
        raise ValueError("cannot place air")
    if not grid.is_air(pos):
        raise Occupied(f"cell {pos} already holds id {grid.get(pos)}")
    grid._set(pos, block_id)
    return WorldDelta(((pos, AIR, block_id),))


def destroy_block(grid: VoxelGrid, pos: Position) -> WorldDelta:
    """Remove the block at pos; returns the one-entry delta."""
    if not grid.in_bounds(pos):
        raise OutOfBounds(f"{pos} outside {grid.dims}")
    before = grid.get(pos)
    if before == AIR:
        raise NothingThere(f"cell {pos} is air")
    grid._set(pos, AIR)
    return WorldDelta(((pos, before, AIR),))


def step_agent(pose: Pose, grid: VoxelGrid, direction: Position) -> Pose:
    """Advance one voxel along an axis step if the target cell is free air."""
    if direction not in AXIS_STEPS:
        raise ValueError(f"{direction} is not an axis unit step")
    target = (pose.x + direction[0], pose.y + direction[1], pose.z + direction[2])
    if not grid.in_bounds(target):
        raise OutOfBounds(f"{target} outside {grid.dims}")
    if not grid.is_air(target):
        raise Blocked(f"cell {target} holds id {grid.get(target)}")
    return replace(pose, x=target[0], y=target[1], z=target[2])


def apply_delta(grid: VoxelGrid, delta: WorldDelta) -> VoxelGrid:
    """Apply recorded changes in order; each `before` must match the grid."""
    for pos, before, after in delta.entries:
        if not grid.in_bounds(pos):
            raise OutOfBounds(f"{pos} outside {grid.dims}")
        if grid.get(pos) != before:
            raise StaleDelta(f"cell {pos} holds {grid.get(pos)}, delta expected {before}")
        grid._set(pos, after)
    return grid

def revert_delta(grid: VoxelGrid, delta: WorldDelta) -> VoxelGrid:
    """Undo recorded changes in reverse order; each `after` must match."""
    for pos, before, after in reversed(delta.entries):
        if not grid.in_bounds(pos):
            raise OutOfBounds(f"{pos} outside {grid.dims}")
        if grid.get(pos) != after:
            raise StaleDelta(f"cell {pos} holds {grid.get(pos)}, delta expected {after}")
        grid._set(pos, before)
    return grid


def point_at(grid: VoxelGrid, region: Region, duration: int = DEFAULT_POINT_DURATION) -> PointEvent:
    """Validate and normalize a region to flash; the session layer streams it."""
    norm = region.normalized()
    if not (grid.in_bounds(norm.lo) and grid.in_bounds(norm.hi)):
        raise OutOfBounds(f"region {norm.lo}..{norm.hi} outside {grid.dims}")
    return PointEvent(norm, duration)


def _ray_voxels(origin, direction, max_range) -> Iterator[tuple[Position, float]]:
    """Exact incremental voxel traversal, yielding (voxel, entry distance)."""
    ox, oy, oz = origin
    dx, dy, dz = direction
    vx, vy, vz = math.floor(ox), math.floor(oy), math.floor(oz)
    step = [0, 0, 0]
    t_max = [math.inf, math.inf, math.inf]
    t_delta = [math.inf, math.inf, math.inf]
    for axis, (o, d, v) in enumerate(((ox, dx, vx), (oy, dy, vy), (oz, dz, vz))):
        if d > 0:
            step[axis] = 1
            t_max[axis] = (v + 1 - o) / d
            t_delta[axis] = 1.0 / d
        elif d < 0:
            step[axis] = -1
            t_max[axis] = (v - o) / d
            t_delta[axis] = -1.0 / d
    voxel = [vx, vy, vz]
    t = 0.0
    while t <= max_range:
        yield (voxel[0], voxel[1], voxel[2]), t
        axis = min(range(3), key=lambda a: t_max[a])
        t = t_max[axis]
        voxel[axis] += step[axis]
        t_max[axis] += t_delta[axis]


def look_target(pose: Pose, grid: VoxelGrid, max_range: float = DEFAULT_MAX_GAZE_RANGE) -> Optional[Position]:
    """First non-air voxel along the gaze ray, or None within max_range."""
    origin = (pose.x + 0.5, pose.y + 0.5, pose.z + 0.5)
    for voxel, _ in _ray_voxels(origin, pose.direction(), max_range):
        if not grid.in_bounds(voxel):
            return None  # the grid is convex: once outside, the ray stays outside
        if not grid.is_air(voxel):
            return voxel
    return None


def pose_to_list(pose: Pose) -> list:
    return [pose.x, pose.y, pose.z, pose.pitch, pose.yaw]


def pose_from_list(row: list) -> Pose:
    x, y, z, pitch, yaw = row
    return Pose(int(x), int(y), int(z), float(pitch), float(yaw))


def snapshot_doc(grid: VoxelGrid, agent_pose: Pose, player_pose: Pose) -> dict:
    """World snapshot as a plain dict with canonical (sorted) block order."""
    return {
        "dims": list(grid.dims),
        "palette": grid.palette.to_list(),
        "blocks": [[x, y, z, i] for (x, y, z), i in sorted(grid.cells.items())],
        "agent_pose": pose_to_list(agent_pose),
        "player_pose": pose_to_list(player_pose),
    }


def snapshot_to_text(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def snapshot_from_text(text: str) -> tuple[VoxelGrid, Pose, Pose]:
    doc = json.loads(text)
    grid = VoxelGrid(tuple(doc["dims"]), Palette.from_list(doc["palette"]))
    for x, y, z, i in doc["blocks"]:
        grid._set((x, y, z), i)
    return grid, pose_from_list(doc["agent_pose"]), pose_from_list(doc["player_pose"])
