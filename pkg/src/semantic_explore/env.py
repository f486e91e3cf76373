"""Procedural semantic floorplans plus the agent and sensor simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from enum import IntEnum

import numpy as np
from scipy import ndimage

from . import _kernels

VOID = 0
FLOOR = 1
WALL = 2
FIRST_OBJECT = 3

_OBJECT_NAMES = [
    "bed", "chair", "table", "sofa", "cabinet", "counter", "shelving",
    "plant", "toilet", "sink", "tv_monitor", "stool", "bathtub", "fireplace",
]


class GenerationError(ValueError):
    """Raised when a floorplan cannot be generated under the given config."""


def category_names(n_categories: int) -> list[str]:
    names = ["void", "floor", "wall"] + _OBJECT_NAMES
    names += [f"object_{i}" for i in range(len(names), n_categories)]
    return names[:n_categories]


@dataclass(frozen=True)
class GenConfig:
    """Floorplan generator settings; lengths in meters.

    ``n_categories`` counts every label id including void, so labels lie in
    ``[0, n_categories)``: 0 void, 1 floor, 2 wall, the rest furniture.
    """

    world_size: float = 48.0
    cell_size: float = 0.0375
    building_size: tuple[float, float] = (9.0, 14.0)
    n_rooms: tuple[int, int] = (3, 6)
    min_room_size: float = 2.5
    wall_thickness: float = 0.15
    door_width: float = 0.9
    furniture_density: float = 0.08
    furniture_size: tuple[float, float] = (0.4, 1.4)
    furniture_clearance: float = 0.45
    n_categories: int = 10
    margin: float = 2.6
    max_attempts: int = 25

    @property
    def n_cells(self) -> int:
        return int(round(self.world_size / self.cell_size))

    def validate(self):
        n = self.world_size / self.cell_size
        if abs(n - round(n)) > 1e-6:
            raise GenerationError("world_size must be a whole number of cells")
        if not 3 <= self.n_categories <= 64:
            raise GenerationError("n_categories must lie in [3, 64]")
        lo, hi = self.building_size
        if lo <= 0 or hi < lo:
            raise GenerationError(f"bad building_size range {self.building_size}")
        if hi + 2 * self.margin > self.world_size:
            raise GenerationError("building plus margins does not fit in the world")
        if self.min_room_size + 2 * self.wall_thickness > lo:
            raise GenerationError("rooms larger than the smallest building")
        r_lo, r_hi = self.n_rooms
        if r_lo < 1 or r_hi < r_lo:
            raise GenerationError(f"bad n_rooms range {self.n_rooms}")
        side = (lo - self.wall_thickness) // (self.min_room_size + self.wall_thickness)
        if r_lo > side * side:
            raise GenerationError(f"{r_lo} rooms of {self.min_room_size} m do not fit a {lo} m building")
        if self.door_width + 2 * self.wall_thickness > self.min_room_size:
            raise GenerationError("doors wider than rooms")
        if not 0.0 <= self.furniture_density < 1.0:
            raise GenerationError("furniture_density must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    """Ground-truth world: one label and one occupancy flag per cell."""

    labels: np.ndarray
    obstacle: np.ndarray
    cell_size: float
    n_categories: int
    rooms: tuple = ()

    def __post_init__(self):
        if self.labels.shape != self.obstacle.shape:
            raise ValueError("labels and obstacle layers differ in shape")
        self.labels.setflags(write=False)
        self.obstacle.setflags(write=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def free(self) -> np.ndarray:
        return ~self.obstacle

    @cached_property
    def clearance(self) -> np.ndarray:
        """Distance in meters from each free cell to the nearest obstacle."""
        return ndimage.distance_transform_edt(self.free) * self.cell_size

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def is_free_at(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return 0 <= r < self.height and 0 <= c < self.width and not self.obstacle[r, c]

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return (
            self.cell_size == other.cell_size
            and self.n_categories == other.n_categories
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.obstacle, other.obstacle)
        )

    @classmethod
    def from_labels(cls, labels, cell_size: float, n_categories: int | None = None) -> "SemanticGrid":
        """Build a grid where every label other than floor is an obstacle."""
        labels = np.asarray(labels, dtype=np.uint8)
        if n_categories is None:
            n_categories = max(int(labels.max()) + 1, 3)
        return cls(labels.copy(), labels != FLOOR, float(cell_size), int(n_categories))


# --------------------------------------------------------------------- generation

def _split_rooms(rng, rect, n_target, min_size):
    rooms = [rect]
    while len(rooms) < n_target:
        order = sorted(range(len(rooms)), key=lambda i: -(rooms[i][2] * rooms[i][3]))
        for i in order:
            x, y, w, h = rooms[i]
            axes = [a for a, span in (("v", w), ("h", h)) if span >= 2 * min_size]
            if not axes:
                continue
            axis = "v" if "v" in axes and (w >= h or "h" not in axes) else "h"
            span = w if axis == "v" else h
            cut = rng.uniform(min_size, span - min_size)
            if axis == "v":
                a, b = (x, y, cut, h), (x + cut, y, w - cut, h)
            else:
                a, b = (x, y, w, cut), (x, y + cut, w, h - cut)
            rooms[i:i + 1] = [a, b]
            break
        else:
            return None
    return rooms


def _shared_edge(a, b, eps=1e-9):
    """Return (axis, coord, lo, hi) of the wall shared by two rooms, or None."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if abs(ax + aw - bx) < eps or abs(bx + bw - ax) < eps:
        coord = bx if abs(ax + aw - bx) < eps else ax
        lo, hi = max(ay, by), min(ay + ah, by + bh)
        return ("x", coord, lo, hi) if hi > lo else None
    if abs(ay + ah - by) < eps or abs(by + bh - ay) < eps:
        coord = by if abs(ay + ah - by) < eps else ay
        lo, hi = max(ax, bx), min(ax + aw, bx + bw)
        return ("y", coord, lo, hi) if hi > lo else None
    return None


def _attempt(rng, cfg: GenConfig):
    cs = cfg.cell_size
    n = cfg.n_cells
    t = cfg.wall_thickness
    bw = rng.uniform(*cfg.building_size)
    bh = rng.uniform(*cfg.building_size)
    bx = rng.uniform(cfg.margin, cfg.world_size - cfg.margin - bw)
    by = rng.uniform(cfg.margin, cfg.world_size - cfg.margin - bh)
    n_rooms = int(rng.integers(cfg.n_rooms[0], cfg.n_rooms[1] + 1))
    rooms = _split_rooms(rng, (bx, by, bw, bh), n_rooms, cfg.min_room_size + t)
    if rooms is None:
        return None

    def to_cells(x0, y0, x1, y1):
        return (int(round(y0 / cs)), int(round(y1 / cs)), int(round(x0 / cs)), int(round(x1 / cs)))

    labels = np.zeros((n, n), np.uint8)
    r0, r1, c0, c1 = to_cells(bx, by, bx + bw, by + bh)
    labels[r0:r1, c0:c1] = WALL
    interiors = []
    for x, y, w, h in rooms:
        ir0, ir1, ic0, ic1 = to_cells(x + t / 2, y + t / 2, x + w - t / 2, y + h - t / 2)
        ir0, ic0 = max(ir0, r0 + int(round(t / cs))), max(ic0, c0 + int(round(t / cs)))
        ir1, ic1 = min(ir1, r1 - int(round(t / cs))), min(ic1, c1 - int(round(t / cs)))
        labels[ir0:ir1, ic0:ic1] = FLOOR
        interiors.append((ir0, ir1, ic0, ic1))

    # doors along a random spanning tree of the room adjacency graph, plus extras
    edges = []
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            e = _shared_edge(rooms[i], rooms[j])
            if e is not None and e[3] - e[2] >= cfg.door_width + 2 * t:
                edges.append((i, j, e))
    order = rng.permutation(len(edges))
    parent = list(range(len(rooms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    doors = []
    for k in order:
        i, j, e = edges[k]
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            doors.append(e)
        elif rng.random() < 0.25:
            doors.append(e)
    if len({find(i) for i in range(len(rooms))}) != 1:
        return None
    keepout = np.zeros((n, n), bool)
    reach = int(round((t + cfg.furniture_clearance) / cs))
    for axis, coord, lo, hi in doors:
        pos = rng.uniform(lo + t, hi - t - cfg.door_width)
        a0, a1 = int(round(pos / cs)), int(round((pos + cfg.door_width) / cs))
        k0, k1 = int(round((coord - t) / cs)), int(round((coord + t) / cs))
        if axis == "x":
            labels[a0:a1, k0:k1] = FLOOR
            keepout[a0:a1, k0 - reach:k1 + reach] = True
        else:
            labels[k0:k1, a0:a1] = FLOOR
            keepout[k0 - reach:k1 + reach, a0:a1] = True

    obstacle = labels != FLOOR
    n_obj = cfg.n_categories - FIRST_OBJECT
    if n_obj > 0 and cfg.furniture_density > 0:
        bbox = (slice(r0, r1), slice(c0, c1))
        clear = int(round(cfg.furniture_clearance / cs))
        for ir0, ir1, ic0, ic1 in interiors:
            # each room favours a couple of object kinds
            kinds = rng.choice(np.arange(FIRST_OBJECT, cfg.n_categories), size=min(2, n_obj), replace=False)
            budget = cfg.furniture_density * (ir1 - ir0) * (ic1 - ic0)
            placed = 0.0
            for _ in range(40):
                if placed >= budget:
                    break
                fh = int(round(rng.uniform(*cfg.furniture_size) / cs))
                fw = int(round(rng.uniform(*cfg.furniture_size) / cs))
                if fh >= ir1 - ir0 - clear or fw >= ic1 - ic0 - clear:
                    continue
                # furniture usually sits against a wall
                if rng.random() < 0.6:
                    side = rng.integers(4)
                    fr = ir0 if side == 0 else ir1 - fh if side == 1 else int(rng.integers(ir0, ir1 - fh))
                    fc = ic0 if side == 2 else ic1 - fw if side == 3 else int(rng.integers(ic0, ic1 - fw))
                else:
                    fr = int(rng.integers(ir0, ir1 - fh))
                    fc = int(rng.integers(ic0, ic1 - fw))
                # no slivers between furniture and walls
                fr = ir0 if fr - ir0 < clear else ir1 - fh if ir1 - fh - fr < clear else fr
                fc = ic0 if fc - ic0 < clear else ic1 - fw if ic1 - fw - fc < clear else fc
                zone = (slice(max(fr - clear, 0), fr + fh + clear), slice(max(fc - clear, 0), fc + fw + clear))
                if keepout[zone].any() or (labels[zone] >= FIRST_OBJECT).any():
                    continue
                kind = kinds[0] if rng.random() < 0.7 else kinds[-1]
                trial = obstacle[bbox].copy()
                trial[fr - r0:fr - r0 + fh, fc - c0:fc - c0 + fw] = True
                _, n_comp = ndimage.label(~trial)
                if n_comp != 1:
                    continue
                labels[fr:fr + fh, fc:fc + fw] = kind
                obstacle[fr:fr + fh, fc:fc + fw] = True
                placed += fh * fw
    _, n_comp = ndimage.label(~obstacle)
    if n_comp != 1:
        return None
    room_boxes = tuple((a * cs, c * cs, (d - c) * cs, (b - a) * cs) for a, b, c, d in interiors)
    return SemanticGrid(labels, obstacle, cs, cfg.n_categories, room_boxes)


def generate_floorplan(seed: int, config: GenConfig | None = None) -> SemanticGrid:
    """Generate a connected multi-room floorplan, deterministic in ``(seed, config)``.

    Rooms come from a binary split of a rectangular building, doors are cut
    along a spanning tree of the room adjacency graph, and furniture blocks are
    only accepted when the free space stays a single 4-connected component.
    Everything outside the building is void and untraversable.
    """
    cfg = config or GenConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_attempts):
        grid = _attempt(rng, cfg)
        if grid is not None:
            return grid
    raise GenerationError(f"no valid floorplan after {cfg.max_attempts} attempts (seed={seed})")


def is_connected(grid: SemanticGrid) -> bool:
    _, n_comp = ndimage.label(grid.free)
    return n_comp == 1


def sample_start(grid: SemanticGrid, seed: int, clearance: float = 0.3) -> "AgentState":
    """Random free pose at least ``clearance`` meters from any obstacle."""
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(grid.clearance >= clearance)
    if rows.size == 0:
        rows, cols = np.nonzero(grid.free)
    i = int(rng.integers(rows.size))
    cs = grid.cell_size
    return AgentState((cols[i] + 0.5) * cs, (rows[i] + 0.5) * cs, 0.0, 0)


# --------------------------------------------------------------------- agent

class Action(IntEnum):
    MoveForward = 0
    RotateRight = 1
    RotateLeft = 2


@dataclass(frozen=True)
class MotionConfig:
    stride: float = 0.25
    turn: float = math.radians(30.0)

    @property
    def n_headings(self) -> int:
        n = 2 * math.pi / self.turn
        if abs(n - round(n)) > 1e-9:
            raise ValueError("turn increment must divide a full circle")
        return int(round(n))


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    step: int = 0


def heading_index(heading: float, motion: MotionConfig) -> int:
    return int(round(heading / motion.turn)) % motion.n_headings


def path_clear(obstacle: np.ndarray, x0, y0, x1, y1, cell_size: float) -> bool:
    """True when every cell under the segment is inside the grid and free."""
    cells = _kernels.segment_cells(x0 / cell_size, y0 / cell_size, x1 / cell_size, y1 / cell_size)
    h, w = obstacle.shape
    r, c = cells[:, 0], cells[:, 1]
    if (r < 0).any() or (c < 0).any() or (r >= h).any() or (c >= w).any():
        return False
    return not obstacle[r, c].any()


def step(state: AgentState, action: Action, grid: SemanticGrid, motion: MotionConfig = MotionConfig()) -> AgentState:
    """Apply one action; blocked forward motion leaves the position unchanged."""
    action = Action(action)
    n = motion.n_headings
    k = heading_index(state.heading, motion)
    x, y = state.x, state.y
    if action is Action.MoveForward:
        th = k * motion.turn
        nx = x + motion.stride * math.cos(th)
        ny = y + motion.stride * math.sin(th)
        if path_clear(grid.obstacle, x, y, nx, ny, grid.cell_size):
            x, y = nx, ny
    elif action is Action.RotateLeft:
        k = (k + 1) % n
    else:
        k = (k - 1) % n
    return AgentState(x, y, k * motion.turn, state.step + 1)


# --------------------------------------------------------------------- sensing

@dataclass(frozen=True)
class SensorConfig:
    fov: float = 2 * math.pi
    n_rays: int = 360
    max_range: float = 5.0
    p_noise: float = 0.05

    def angles(self, heading: float) -> np.ndarray:
        if self.n_rays < 1:
            return np.zeros(0)
        if self.fov >= 2 * math.pi - 1e-12:
            offsets = np.arange(self.n_rays) * (2 * math.pi / self.n_rays)
        elif self.n_rays == 1:
            offsets = np.zeros(1)
        else:
            offsets = np.linspace(-self.fov / 2, self.fov / 2, self.n_rays)
        return np.mod(heading + offsets, 2 * math.pi)


@dataclass(frozen=True, eq=False)
class Observation:
    """One sensor sweep, egocentric: distances in meters, angles in world frame.

    ``hit_*`` arrays are per ray. ``sample_*`` arrays list every cell a ray
    passed through (free cells up to the hit, then the hit cell itself) as a
    distance along the ray and the reported label; ``sample_cell`` holds the
    same cells as grid ``(row, col)`` pairs, which spares consumers from
    re-deriving them from rounded distances.
    """

    angles: np.ndarray
    hit_dist: np.ndarray
    hit_label: np.ndarray
    hit: np.ndarray
    sample_ray: np.ndarray
    sample_dist: np.ndarray
    sample_label: np.ndarray
    sample_hit: np.ndarray
    max_range: float
    fov: float
    sample_cell: np.ndarray | None = None

    @property
    def n_rays(self) -> int:
        return self.angles.shape[0]

    @classmethod
    def empty(cls, sensor: SensorConfig | None = None) -> "Observation":
        sensor = sensor or SensorConfig()
        f, i, b = np.zeros(0), np.zeros(0, np.int64), np.zeros(0, bool)
        return cls(f, f, i, b, i, f, i, b, sensor.max_range, sensor.fov, np.zeros((0, 2), np.int64))

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        names = ("angles", "hit_dist", "hit_label", "hit", "sample_ray", "sample_dist", "sample_label", "sample_hit")
        cells = (self.sample_cell is None) == (other.sample_cell is None) and (
            self.sample_cell is None or np.array_equal(self.sample_cell, other.sample_cell))
        return cells and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


def _wrong_labels(true: np.ndarray, draws: np.ndarray, n_categories: int) -> np.ndarray:
    # uniform over non-void ids other than the true one (falls back to void when none exist)
    out = np.empty_like(true)
    for i, (t, u) in enumerate(zip(true, draws)):
        choices = [c for c in range(1, n_categories) if c != t] or [c for c in range(n_categories) if c != t]
        out[i] = choices[min(int(u * len(choices)), len(choices) - 1)]
    return out


def sense(state: AgentState, grid: SemanticGrid, sensor: SensorConfig = SensorConfig(), noise_seed: int = 0) -> Observation:
    """Cast the sensor fan from the agent pose through the ground-truth grid."""
    if sensor.max_range <= 0:
        raise ValueError("max_range must be positive")
    angles = sensor.angles(state.heading)
    if angles.size == 0:
        return Observation.empty(sensor)
    cs = grid.cell_size
    hd, hl, hf, s_ray, s_dist, s_label, s_hit, s_row, s_col = _kernels.cast_rays(
        grid.obstacle, grid.labels.astype(np.int64), state.x / cs, state.y / cs, angles, sensor.max_range / cs
    )
    if sensor.p_noise > 0:
        rng = np.random.default_rng(noise_seed)
        flip = rng.random(angles.size) < sensor.p_noise
        draws = rng.random(angles.size)
        flip &= hf
        if flip.any():
            hl = hl.copy()
            hl[flip] = _wrong_labels(hl[flip], draws[flip], grid.n_categories)
            hit_rows = np.flatnonzero(s_hit)
            s_label = s_label.copy()
            s_label[hit_rows] = hl[s_ray[hit_rows]]
    return Observation(angles, hd * cs, hl, hf, s_ray, s_dist * cs, s_label, s_hit, sensor.max_range, sensor.fov,
                       np.column_stack([s_row, s_col]))


def step_seed(base: int, t: int) -> int:
    """Per-step noise seed derived from an episode seed."""
    return int(np.random.SeedSequence([int(base), int(t)]).generate_state(1)[0])
