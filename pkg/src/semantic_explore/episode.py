"""Episode configuration and the sense-map-plan-act loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import traceback
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .env import (Action, AgentState, GenConfig, MotionConfig, SemanticGrid, SensorConfig, generate_floorplan,
                  sample_start, sense, step, step_seed)
from .full_mapper import GlobalMapBundle, crop_window, fuse
from .local_mapper import PatchPrior, build_local_bundle, window_origin
from .metrics import Metrics, MetricTracker
from .navigator import (PolicyInput, PolicyKind, fmm_field, frontier_distance_window, global_frontier, obstacles_from_proj, plan_action,
                        select_goal)
from .policy_learn import DEFAULT_ETAS, GoalScorer, RewardTerms, reward_from_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything that determines one episode.

    Distances are meters, ``motion.turn`` radians. ``min_goal_dist`` defaults
    to one stride so a fresh goal always asks for at least one move.
    """

    name: str = "episode"
    gen: GenConfig = GenConfig()
    sensor: SensorConfig = SensorConfig()
    motion: MotionConfig = MotionConfig()
    policy: str = PolicyKind.UncertaintyGreedy.value
    mu: int = 10
    k: int = 500
    etas: tuple[float, float, float] = DEFAULT_ETAS
    local_size: int = 128
    world_seed: int = 0
    noise_seed: int = 0
    start_seed: int = 0
    policy_seed: int = 0
    unseen_penalty: float = 1.0
    min_goal_dist: float | None = None
    proxy_reward: bool = False
    prior_path: str | None = None
    scorer_path: str | None = None
    trace_path: str | None = None

    def replace(self, **changes) -> "EpisodeConfig":
        return dataclasses.replace(self, **changes)

    def validate(self):
        PolicyKind(self.policy)
        if self.mu < 1:
            raise ValueError("goal refresh interval mu must be >= 1")
        if self.k < 0:
            raise ValueError("step budget k must be >= 0")
        if self.local_size < 1:
            raise ValueError("local_size must be positive")
        self.gen.validate()
        self.motion.n_headings
        return self

    @property
    def goal_min_dist(self) -> float:
        return self.motion.stride if self.min_goal_dist is None else self.min_goal_dist

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["etas"] = list(self.etas)
        d["gen"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["gen"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        d = dict(d)
        if "gen" in d:
            d["gen"] = GenConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["gen"].items()})
        if "sensor" in d:
            s = dict(d["sensor"])
            if "fov_deg" in s:
                s["fov"] = math.radians(s.pop("fov_deg"))
            d["sensor"] = SensorConfig(**s)
        if "motion" in d:
            m = dict(d["motion"])
            if "turn_deg" in m:
                m["turn"] = math.radians(m.pop("turn_deg"))
            d["motion"] = MotionConfig(**m)
        if "etas" in d:
            d["etas"] = tuple(float(v) for v in d["etas"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown episode settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpisodeResult:
    name: str
    policy: str
    seeds: dict
    steps: int
    metrics: Metrics
    rewards: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    n_fallback: int = 0
    failed: bool = False
    diagnostic: str = ""
    maps: GlobalMapBundle | None = field(default=None, repr=False, compare=False)

    @property
    def total_reward(self) -> float:
        return float(sum(r.r_t for r in self.rewards))

    def to_dict(self) -> dict:
        return {"name": self.name, "policy": self.policy, "seeds": dict(self.seeds), "steps": self.steps,
                "metrics": self.metrics.to_dict(), "rewards": [r.to_dict() for r in self.rewards],
                "goals": [list(g) for g in self.goals], "n_fallback": self.n_fallback,
                "failed": self.failed, "diagnostic": self.diagnostic}

    @classmethod
    def from_dict(cls, d) -> "EpisodeResult":
        m = d["metrics"]
        metrics = Metrics(m["cov_p"], m["asc_p"], m["cov_c"], m["asc_c"],
                          {k: list(v) for k, v in m.get("series", {}).items()})
        return cls(d["name"], d["policy"], dict(d["seeds"]), int(d["steps"]), metrics,
                   [RewardTerms.from_dict(r) for r in d["rewards"]], [list(g) for g in d["goals"]],
                   int(d["n_fallback"]), bool(d["failed"]), d["diagnostic"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@lru_cache(maxsize=16)
def cached_world(seed: int, gen: GenConfig) -> SemanticGrid:
    return generate_floorplan(seed, gen)


@lru_cache(maxsize=4)
def _load_prior(path: str) -> PatchPrior:
    return PatchPrior.load(path)


@lru_cache(maxsize=8)
def _load_scorer(path: str) -> GoalScorer:
    return GoalScorer.load(path)


def _start_state(grid: SemanticGrid, cfg: EpisodeConfig) -> AgentState:
    s = sample_start(grid, cfg.start_seed)
    n = cfg.motion.n_headings
    k = int(np.random.default_rng([cfg.start_seed, 1]).integers(n))
    return AgentState(s.x, s.y, k * cfg.motion.turn, 0)


def run_episode(grid: SemanticGrid | None, cfg: EpisodeConfig, prior: PatchPrior | None = None,
                scorer: GoalScorer | None = None, keep_maps: bool = False) -> EpisodeResult:
    """Explore ``grid`` for ``cfg.k`` steps and report rewards and metrics.

    Each step senses, builds the local bundle, fuses it, reselects the goal
    when due (every ``mu`` steps, on arrival, when the planner is stuck or the
    goal left the window), then takes one FMM-guided action. Errors raised by
    any stage end the episode with ``failed=True`` and a diagnostic. With
    ``keep_maps`` the final global maps are attached to the result.
    """
    cfg.validate()
    seeds = {"world": cfg.world_seed, "noise": cfg.noise_seed, "start": cfg.start_seed, "policy": cfg.policy_seed}
    empty = Metrics(series={"cov_p": [], "asc_p": [], "cov_c": [], "asc_c": []})
    result = EpisodeResult(cfg.name, cfg.policy, seeds, 0, empty)
    trace = open(cfg.trace_path, "w") if cfg.trace_path else None
    try:
        if grid is None:
            grid = cached_world(cfg.world_seed, cfg.gen)
        if prior is None:
            if not cfg.prior_path:
                raise ValueError("run_episode needs a PatchPrior or a prior_path")
            prior = _load_prior(cfg.prior_path)
        policy = PolicyKind(cfg.policy)
        if policy is PolicyKind.Learned and scorer is None:
            if not cfg.scorer_path:
                raise ValueError("the Learned policy needs a scorer or a scorer_path")
            scorer = _load_scorer(cfg.scorer_path)
        maps = _loop(grid, cfg, prior, scorer, policy, result, trace)
        if keep_maps:
            result.maps = maps
    except Exception as exc:  # the episode is the unit of failure
        result.failed = True
        result.diagnostic = f"{type(exc).__name__}: {exc}\n" + "".join(traceback.format_tb(exc.__traceback__)[-3:])
        log.warning("episode %s failed: %s", cfg.name, exc)
    finally:
        if trace is not None:
            trace.close()
    return result


def _loop(grid, cfg: EpisodeConfig, prior, scorer, policy, result: EpisodeResult, trace):
    cs = grid.cell_size
    size = cfg.local_size
    # samples past the window corner are dropped by the projection, so the
    # cast can stop there; per-ray noise draws are unaffected
    reach = math.hypot(size // 2 + 1, size // 2 + 1) * cs
    sensor = dataclasses.replace(cfg.sensor, max_range=min(cfg.sensor.max_range, reach))
    maps = GlobalMapBundle.empty(grid.shape, cs)
    tracker = MetricTracker(grid, maps)
    collisions = np.zeros(grid.shape, bool)
    # goals the planner could not make progress toward, kept out of later picks
    abandoned = np.zeros(grid.shape, bool)
    series = result.metrics.series
    state = _start_state(grid, cfg)
    goal = None
    goal_conf = 0.0
    refresh = True
    interval_start = None
    proxy_start = 0.0

    def close_interval(now: Metrics):
        proxy = (proxy_start, tracker.expected_asc) if cfg.proxy_reward else None
        terms = reward_from_metrics(interval_start, now, goal_conf, cfg.etas, proxy)
        result.rewards.append(terms)
        return terms

    terms = None
    for t in range(cfg.k):
        obs = sense(state, grid, sensor, step_seed(cfg.noise_seed, t))
        local = build_local_bundle(obs, state, prior, size=size, cell_size=cs, p_noise=cfg.sensor.p_noise)
        tracker.before(local.origin, size)
        fuse(maps, local, inplace=True)
        tracker.after()
        now = tracker.snapshot()
        for key, v in now.values().items():
            series[key].append(v)

        origin = window_origin(state, size, cs)
        r0, c0 = origin
        win = (slice(r0, r0 + size), slice(c0, c0 + size))
        obstacles = obstacles_from_proj(maps.M_proj[win]) | collisions[win]
        agent_cell = (int(math.floor(state.y / cs)) - r0, int(math.floor(state.x / cs)) - c0)
        obstacles[agent_cell] = False
        if goal is not None:
            gl = (goal.cell[0] - r0, goal.cell[1] - c0)
            if not (0 <= gl[0] < size and 0 <= gl[1] < size):
                refresh = True
        if refresh or goal is None or t - goal.issue_step >= cfg.mu:
            terms = close_interval(now) if goal is not None else None
            m_proj, m_cmplt, m_conf = crop_window(maps, state, size)
            inp = PolicyInput(m_proj, m_cmplt, m_conf, agent_cell, state.heading, origin, cs, (state.x, state.y),
                              global_frontier(maps.M_proj, origin, size))
            goal = select_goal(policy, inp, step_seed(cfg.policy_seed, t), scorer=scorer, obstacles=obstacles,
                               min_goal_dist=cfg.goal_min_dist, unseen_penalty=cfg.unseen_penalty,
                               exclude=abandoned[win],
                               frontier_distance=lambda: frontier_distance_window(maps.M_proj, collisions, origin,
                                                                                  size),
                               step=t)
            goal_conf = float(m_conf[goal.local_cell])
            result.goals.append([t, int(goal.cell[0]), int(goal.cell[1]), bool(goal.fallback)])
            result.n_fallback += int(goal.fallback)
            interval_start = now
            proxy_start = tracker.expected_asc
            refresh = False
            gl = goal.local_cell
        unseen = maps.M_proj[win] == 0
        fld = fmm_field(obstacles, gl, cs, unseen=unseen, unseen_penalty=cfg.unseen_penalty)
        plan = plan_action(state, fld, obstacles, origin, cs, cfg.motion, arrive_radius=0.5 * cfg.motion.stride)
        if plan.arrived or plan.stuck:
            refresh = True
        if plan.stuck and not goal.fallback:
            _mark_disk(abandoned, goal.cell, cfg.motion.stride / cs)
        new_state = step(state, plan.action, grid, cfg.motion)
        if plan.action is Action.MoveForward and (new_state.x, new_state.y) == (state.x, state.y):
            _mark_collision(collisions, state, cfg.motion, cs)
        if trace is not None:
            rec = {"step": t, "pose": [state.x, state.y, state.heading], "action": plan.action.name,
                   "goal": [int(goal.cell[0]), int(goal.cell[1])],
                   "reward": terms.to_dict() if terms is not None else None}
            trace.write(json.dumps(rec) + "\n")
            terms = None
        state = new_state
        result.steps = t + 1
    if goal is not None:
        close_interval(tracker.snapshot())
    final = tracker.snapshot()
    result.metrics.cov_p, result.metrics.asc_p = final.cov_p, final.asc_p
    result.metrics.cov_c, result.metrics.asc_c = final.cov_c, final.asc_c
    return maps


def _mark_disk(mask, center, radius):
    r, c = center
    k = int(math.ceil(radius))
    h, w = mask.shape
    rr, cc = np.ogrid[max(r - k, 0):min(r + k + 1, h), max(c - k, 0):min(c + k + 1, w)]
    mask[rr, cc] |= (rr - r) ** 2 + (cc - c) ** 2 <= radius * radius


def _mark_collision(collisions, state: AgentState, motion: MotionConfig, cs: float):
    th = state.heading
    x1 = state.x + motion.stride * math.cos(th)
    y1 = state.y + motion.stride * math.sin(th)
    cells = _kernels.segment_cells(state.x / cs, state.y / cs, x1 / cs, y1 / cs)[1:]
    h, w = collisions.shape
    for r, c in cells:
        if 0 <= r < h and 0 <= c < w:
            collisions[r, c] = True
