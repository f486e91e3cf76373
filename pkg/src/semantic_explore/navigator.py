"""Long-term goal selection and FMM-driven short-term actions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from . import _kernels
from .env import FLOOR, VOID, Action, AgentState, MotionConfig, heading_index
from .validation import check_mask

log = logging.getLogger(__name__)


class PolicyKind(str, Enum):
    UncertaintyGreedy = "UncertaintyGreedy"
    Frontier = "Frontier"
    Random = "Random"
    Learned = "Learned"


@dataclass(frozen=True)
class LongTermGoal:
    """A waypoint in global cells, with the window cell it had when issued."""

    cell: tuple[int, int]
    local_cell: tuple[int, int]
    world: tuple[float, float]
    issue_step: int
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Travel cost in meters from ``goal`` (window cells); ``inf`` is unreachable."""

    values: np.ndarray
    goal: tuple[int, int]
    snapped: bool = False


@dataclass(frozen=True, eq=False)
class PolicyInput:
    """Window crops around the agent plus pose embeddings."""

    m_proj: np.ndarray
    m_cmplt: np.ndarray
    m_conf: np.ndarray
    agent_cell: tuple[int, int]
    heading: float
    origin: tuple[int, int]
    cell_size: float
    position: tuple[float, float] = (0.0, 0.0)
    frontier: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.m_proj.shape[0]

    @property
    def frontier_cells(self) -> np.ndarray:
        """Frontier mask; when not supplied, space beyond the window counts as seen."""
        return frontier_mask(self.m_proj) if self.frontier is None else np.asarray(self.frontier, bool)

    @property
    def heading_embedding(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    @property
    def position_embedding(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


def obstacles_from_proj(m_proj: np.ndarray) -> np.ndarray:
    """Observed non-floor cells block motion; unseen space does not."""
    m_proj = np.asarray(m_proj)
    return (m_proj != VOID) & (m_proj != FLOOR)


def frontier_mask(m_proj: np.ndarray, pad: int = 0) -> np.ndarray:
    """Observed floor cells with an unseen 4-neighbour.

    With ``pad=1`` the input carries a one-cell ring of context from beyond
    the window and the returned mask covers only the interior.
    """
    m_proj = np.asarray(m_proj)
    unseen = m_proj == VOID
    near = np.zeros_like(unseen)
    near[1:, :] |= unseen[:-1, :]
    near[:-1, :] |= unseen[1:, :]
    near[:, 1:] |= unseen[:, :-1]
    near[:, :-1] |= unseen[:, 1:]
    out = (m_proj == FLOOR) & near
    return out[pad:out.shape[0] - pad, pad:out.shape[1] - pad] if pad else out


def frontier_distance_window(M_proj: np.ndarray, blocked: np.ndarray, origin, size: int) -> np.ndarray:
    """Hops over observed floor from each window cell to the nearest global frontier."""
    floor = (M_proj == FLOOR) & ~blocked
    hops = _kernels.bfs_from_sources(floor, frontier_mask(M_proj) & floor)
    r0, c0 = origin
    return hops[r0:r0 + size, c0:c0 + size]


def global_frontier(M_proj: np.ndarray, origin, size: int) -> np.ndarray:
    """Frontier mask of a window, judging border cells against the global map."""
    r0, c0 = origin
    h, w = M_proj.shape
    ext = np.zeros((size + 2, size + 2), M_proj.dtype)
    rs, re = max(r0 - 1, 0), min(r0 + size + 1, h)
    cs_, ce = max(c0 - 1, 0), min(c0 + size + 1, w)
    ext[rs - r0 + 1:re - r0 + 1, cs_ - c0 + 1:ce - c0 + 1] = M_proj[rs:re, cs_:ce]
    return frontier_mask(ext, pad=1)


# ------------------------------------------------------------------ FMM field

def fmm_field(obstacles, goal, cell_size: float = 1.0, unseen=None, unseen_penalty: float = 1.0) -> DistanceField:
    """Geodesic travel cost from ``goal`` over the free cells of ``obstacles``.

    Free cells have unit slowness; cells flagged in ``unseen`` are multiplied
    by ``unseen_penalty`` (1.0 treats them exactly like free space). A goal on
    an obstacle is moved to the nearest free cell.
    """
    obstacles = check_mask(np.asarray(obstacles, dtype=np.uint8), "obstacles").astype(bool)
    gr, gc = int(goal[0]), int(goal[1])
    h, w = obstacles.shape
    if not (0 <= gr < h and 0 <= gc < w):
        raise ValueError(f"goal {goal} outside the {obstacles.shape} field")
    snapped = False
    if obstacles[gr, gc]:
        if obstacles.all():
            return DistanceField(np.full(obstacles.shape, np.inf), (gr, gc), False)
        _, (ir, ic) = ndimage.distance_transform_edt(obstacles, return_indices=True)
        log.info("goal %s lies on an obstacle, snapped to %s", (gr, gc), (int(ir[gr, gc]), int(ic[gr, gc])))
        gr, gc = int(ir[gr, gc]), int(ic[gr, gc])
        snapped = True
    slowness = np.ones(obstacles.shape)
    if unseen is not None and unseen_penalty != 1.0:
        if unseen_penalty <= 0:
            raise ValueError("unseen_penalty must be positive")
        slowness[np.asarray(unseen, bool)] = unseen_penalty
    slowness[obstacles] = np.inf
    values = _kernels.fmm_solve(slowness, gr, gc, float(cell_size))
    return DistanceField(values, (gr, gc), snapped)


# ------------------------------------------------------------- goal selection

def reachable_candidates(field: DistanceField, obstacles, min_dist: float = 0.0) -> np.ndarray:
    """Flat indices (row-major, ascending) of free cells reachable beyond ``min_dist``."""
    v = field.values
    ok = np.isfinite(v) & ~np.asarray(obstacles, bool) & (v > min_dist)
    return np.flatnonzero(ok)


def _nearest_first(primary, dist, flat):
    # lexsort: last key is primary; then distance, then row-major index
    order = np.lexsort((flat, dist, primary))
    return flat[order[0]]


_EXPLORERS = (PolicyKind.UncertaintyGreedy, PolicyKind.Frontier, PolicyKind.Learned)


def select_goal(policy, inp: PolicyInput, rng_seed=0, *, scorer=None, obstacles=None, field=None,
                min_goal_dist: float = 0.0, unseen_penalty: float = 1.0, exclude=None,
                frontier_distance=None, step: int = 0) -> LongTermGoal:
    """Pick a long-term goal inside the window for the given policy.

    ``field`` is the travel cost from the agent; it is computed when omitted.
    Cells set in ``exclude`` are never chosen. ``frontier_distance`` is a
    zero-argument callable returning, per window cell, the hop count to the
    nearest frontier anywhere in the global map (-1 if none). Every policy
    but Random uses it to head toward frontiers outside the window once the
    window holds nothing left to explore: no frontier candidate for Frontier
    and Learned, no unseen candidate for UncertaintyGreedy. With no
    admissible candidate the goal falls back to the agent cell and is flagged.
    """
    policy = PolicyKind(policy)
    if obstacles is None:
        obstacles = obstacles_from_proj(inp.m_proj)
    obstacles = np.asarray(obstacles, bool).copy()
    ar, ac = inp.agent_cell
    obstacles[ar, ac] = False
    if field is None:
        field = fmm_field(obstacles, inp.agent_cell, inp.cell_size, unseen=inp.m_proj == VOID,
                          unseen_penalty=unseen_penalty)
    flat = reachable_candidates(field, obstacles, min_goal_dist)
    if exclude is not None:
        flat = flat[~np.asarray(exclude, bool).ravel()[flat]]
    size = inp.size
    dist = field.values.ravel()
    fr = inp.frontier_cells.ravel()
    chosen = None
    if policy is PolicyKind.Frontier:
        front = flat[fr[flat]]
        if front.size:
            hops = _kernels.bfs_hops(~obstacles, ar, ac).ravel()[front]
            keep = hops >= 0
            if keep.any():
                front, hops = front[keep], hops[keep]
                chosen = front[np.lexsort((front, hops))[0]]
    elif flat.size:
        if policy is PolicyKind.UncertaintyGreedy:
            if frontier_distance is None or (np.asarray(inp.m_proj).ravel()[flat] == VOID).any():
                chosen = _nearest_first(inp.m_conf.ravel()[flat], dist[flat], flat)
        elif policy is PolicyKind.Random:
            chosen = flat[np.random.default_rng(rng_seed).integers(flat.size)]
        elif fr[flat].any() or frontier_distance is None:
            if scorer is None:
                raise ValueError("the Learned policy needs a fitted scorer")
            scores = scorer.decision_function(scorer.features(inp, field, flat))
            chosen = _nearest_first(-scores, dist[flat], flat)
    if chosen is None and flat.size and frontier_distance is not None and policy in _EXPLORERS:
        # nothing left to explore inside the window: head for the closest global frontier
        away = np.asarray(frontier_distance()).ravel()[flat]
        keep = away >= 0
        if keep.any():
            chosen = _nearest_first(away[keep], dist[flat[keep]], flat[keep])
    fallback = chosen is None
    if fallback:
        log.info("no admissible goal candidate at step %d, rescanning in place", step)
        r, c = ar, ac
    else:
        r, c = divmod(int(chosen), size)
    r0, c0 = inp.origin
    cs = inp.cell_size
    return LongTermGoal((r0 + r, c0 + c), (r, c), ((c0 + c + 0.5) * cs, (r0 + r + 0.5) * cs), step, fallback)


# ------------------------------------------------------------ short-term policy

@dataclass(frozen=True)
class ActionPlan:
    action: Action
    arrived: bool
    stuck: bool = False


def plan_action(state: AgentState, field: DistanceField, obstacles, origin=(0, 0), cell_size: float = 1.0,
                motion: MotionConfig = MotionConfig(), arrive_radius: float | None = None) -> ActionPlan:
    """Choose the next primitive action by descending ``field``.

    Every heading is scored by the field value one stride ahead (``inf`` when
    the straight move would cross an obstacle or leave the window). The agent
    moves forward when its current heading strictly decreases the cost and is
    no worse than the best heading by more than one turn's worth of stride;
    otherwise it turns toward the best heading along the shorter way, with ties
    turning left. When no single stride descends, headings are scored by the
    best cost reachable with a second stride instead. Arrival and dead ends
    both rotate left and report it.
    """
    obstacles = np.asarray(obstacles, bool)
    values = field.values
    r0, c0 = origin
    gx, gy = state.x / cell_size - c0, state.y / cell_size - r0
    ar, ac = int(math.floor(gy)), int(math.floor(gx))
    size_r, size_c = values.shape
    here = values[ar, ac] if (0 <= ar < size_r and 0 <= ac < size_c) else np.inf
    if arrive_radius is None:
        arrive_radius = 0.0
    if (ar, ac) == tuple(field.goal) or here <= arrive_radius:
        return ActionPlan(Action.RotateLeft, arrived=True)
    n = motion.n_headings
    stride = motion.stride / cell_size
    costs, ends = _heading_costs(gx, gy, values, obstacles, motion.turn, n, stride)
    best = costs.min()
    if not best < here:
        # no single stride descends (typically hugging a wall corner): look two strides ahead
        two = np.full(n, np.inf)
        for k in np.flatnonzero(np.isfinite(costs)):
            two[k] = _heading_costs(ends[k][0], ends[k][1], values, obstacles, motion.turn, n, stride)[0].min()
        if not two.min() < here:
            return ActionPlan(Action.RotateLeft, arrived=False, stuck=True)
        costs, best = two, two.min()
    cur = heading_index(state.heading, motion)
    slack = motion.stride * (1.0 - math.cos(motion.turn))
    if costs[cur] < here and costs[cur] <= best + slack:
        return ActionPlan(Action.MoveForward, arrived=False)
    targets = np.flatnonzero(costs == best)
    left = (targets - cur) % n
    right = (cur - targets) % n
    fewest = np.minimum(left, right).min()
    turn_left = bool((left == fewest).any())
    return ActionPlan(Action.RotateLeft if turn_left else Action.RotateRight, arrived=False)


def _heading_costs(gx, gy, values, obstacles, turn, n, stride):
    """Field value one stride ahead for every heading, with the end points (window cells, fractional)."""
    size_r, size_c = values.shape
    costs = np.full(n, np.inf)
    ends = []
    for k in range(n):
        th = k * turn
        ex, ey = gx + stride * math.cos(th), gy + stride * math.sin(th)
        ends.append((ex, ey))
        cells = _kernels.segment_cells(gx, gy, ex, ey)
        rr, cc = cells[:, 0], cells[:, 1]
        if (rr < 0).any() or (cc < 0).any() or (rr >= size_r).any() or (cc >= size_c).any():
            continue
        hit = obstacles[rr, cc]
        hit[0] = False
        if hit.any():
            continue
        costs[k] = values[rr[-1], cc[-1]]
    return costs, ends


def next_action(state: AgentState, field: DistanceField, obstacles, origin=(0, 0), cell_size: float = 1.0,
                motion: MotionConfig = MotionConfig()) -> Action:
    return plan_action(state, field, obstacles, origin, cell_size, motion).action
