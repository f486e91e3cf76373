"""Reward terms and a cross-entropy-trained linear goal scorer."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator

from .metrics import Metrics, compute_metrics
from .navigator import DistanceField, PolicyInput

log = logging.getLogger(__name__)

WEIGHTS_FORMAT = "semantic-explore/goal-scorer"
WEIGHTS_VERSION = 1

FEATURE_NAMES = ("mean_uncertainty", "frontier", "distance", "unseen_fraction", "bias")
DEFAULT_ETAS = (0.6, 0.4, 0.4)
# Starts CEM close to the uncertainty-greedy rule, with a frontier bonus and a mild
# preference for nearby goals.
DEFAULT_INIT = (5.0, 1.0, -0.3, 0.0, 0.0)


# --------------------------------------------------------------------- reward

def _exact(*terms) -> float:
    total = sum((Fraction(w) * Fraction(v) for w, v in terms), Fraction(0))
    return float(total)


@dataclass(frozen=True)
class RewardTerms:
    delta_c: float
    delta_asc: float
    conf_t: float
    eta_c: float = DEFAULT_ETAS[0]
    eta_asc: float = DEFAULT_ETAS[1]
    eta_conf: float = DEFAULT_ETAS[2]

    @property
    def r_t(self) -> float:
        """Weighted sum evaluated in rational arithmetic, rounded once."""
        return _exact((self.eta_c, self.delta_c), (self.eta_asc, self.delta_asc), (self.eta_conf, self.conf_t))

    def to_dict(self) -> dict:
        return {**asdict(self), "r_t": self.r_t}

    @classmethod
    def from_dict(cls, d) -> "RewardTerms":
        return cls(*(float(d[k]) for k in ("delta_c", "delta_asc", "conf_t", "eta_c", "eta_asc", "eta_conf")))


def reward_from_metrics(before: Metrics, after: Metrics, goal_conf: float, etas=DEFAULT_ETAS,
                        proxy: tuple[float, float] | None = None) -> RewardTerms:
    """Reward for one goal interval from the metrics at its two ends.

    ``proxy`` switches to the ground-truth-free estimate: a pair of expected
    accurate coverages (before, after) whose doubled difference replaces the
    accurate-coverage gain, and a thousandth of that gain replaces the goal
    confidence.
    """
    if proxy is None:
        return RewardTerms(after.cov_p - before.cov_p, after.asc_c - before.asc_c, float(goal_conf), *etas)
    d_asc = 2.0 * (proxy[1] - proxy[0])
    return RewardTerms(after.cov_p - before.cov_p, d_asc, d_asc / 1000.0, *etas)


def compute_reward(before, after, goal_conf: float, gt, etas=DEFAULT_ETAS) -> RewardTerms:
    """Eq.-2 style reward between two global map snapshots."""
    if before.shape != after.shape or before.cell_size != after.cell_size:
        from .validation import GeometryError
        raise GeometryError("reward needs two snapshots of the same global map geometry")
    if not 0.0 <= goal_conf <= 1.0:
        raise ValueError("goal confidence must lie in [0, 1]")
    return reward_from_metrics(compute_metrics(before, gt), compute_metrics(after, gt), goal_conf, etas)


# ------------------------------------------------------------------- features

def feature_radius_cells(cell_size: float, radius_m: float = 0.1) -> int:
    return max(1, int(round(radius_m / cell_size)))


def _box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    # mean over the in-window part of a (2r+1)^2 box, using integral images
    def box_sum(a):
        p = np.pad(a, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
        h, w = a.shape
        r0 = np.clip(np.arange(h) - radius, 0, h)
        r1 = np.clip(np.arange(h) + radius + 1, 0, h)
        c0 = np.clip(np.arange(w) - radius, 0, w)
        c1 = np.clip(np.arange(w) + radius + 1, 0, w)
        return p[r1][:, c1] - p[r0][:, c1] - p[r1][:, c0] + p[r0][:, c0]
    counts = box_sum(np.ones(values.shape))
    return box_sum(values.astype(float)) / counts


def candidate_features(inp: PolicyInput, field: DistanceField, flat_cells, radius: int | None = None) -> np.ndarray:
    """Feature rows, in ``FEATURE_NAMES`` order, for flat window indices.

    mean_uncertainty: mean of ``1 - m_conf`` over a square neighbourhood.
    frontier: 1 for observed floor next to unseen space.
    distance: travel cost from the agent divided by the window diagonal.
    unseen_fraction: share of unseen ``m_proj`` cells in the neighbourhood.
    bias: constant 1.
    """
    flat_cells = np.asarray(flat_cells, dtype=np.int64)
    if radius is None:
        radius = feature_radius_cells(inp.cell_size)
    diag = inp.size * inp.cell_size * math.sqrt(2.0)
    unc = _box_mean(1.0 - np.asarray(inp.m_conf, float), radius).ravel()
    unseen = _box_mean(np.asarray(inp.m_proj) == 0, radius).ravel()
    fr = inp.frontier_cells.ravel()
    dist = field.values.ravel()[flat_cells]
    dist = np.where(np.isfinite(dist), dist, diag) / diag
    return np.column_stack([
        unc[flat_cells],
        fr[flat_cells].astype(float),
        dist,
        unseen[flat_cells],
        np.ones(flat_cells.size),
    ])


def extract_features(candidate, inp: PolicyInput, field: DistanceField, radius: int | None = None) -> np.ndarray:
    r, c = candidate
    return candidate_features(inp, field, [r * inp.size + c], radius)[0]


# --------------------------------------------------------------------- scorer

class GoalScorer(BaseEstimator):
    """Linear candidate scorer trained by the cross-entropy method.

    Parameters
    ----------
    population : int
        Weight vectors evaluated per iteration; member 0 is always the
        current mean, so a population of one never moves.
    elite_frac : float
        Fraction of the population averaged into the next mean.
    n_iter : int
        CEM iterations.
    init_mean, init_std : sequence of float, float
        Starting sampling distribution over the five weights.
    feature_mask : sequence of bool or None
        Features to use; masked weights stay exactly zero.
    feature_radius : float
        Half-width in meters of the square neighbourhood behind the
        uncertainty and unseen-fraction features (at least one cell).
    episode_config : EpisodeConfig or None
        Template for training rollouts (policy is forced to Learned).
    """

    def __init__(self, population=8, elite_frac=0.25, n_iter=4, init_mean=DEFAULT_INIT, init_std=0.5,
                 min_std=0.05, feature_mask=None, feature_radius=0.1, episode_config=None, seed=0):
        self.population = population
        self.elite_frac = elite_frac
        self.n_iter = n_iter
        self.init_mean = init_mean
        self.init_std = init_std
        self.min_std = min_std
        self.feature_mask = feature_mask
        self.feature_radius = feature_radius
        self.episode_config = episode_config
        self.seed = seed

    @property
    def mask_(self) -> np.ndarray:
        if self.feature_mask is None:
            return np.ones(len(FEATURE_NAMES), bool)
        m = np.asarray(self.feature_mask, bool)
        if m.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"feature_mask needs {len(FEATURE_NAMES)} entries")
        return m

    @classmethod
    def from_weights(cls, weights, feature_mask=None, **params) -> "GoalScorer":
        s = cls(feature_mask=feature_mask, **params)
        s.weights_ = np.where(s.mask_, np.asarray(weights, float), 0.0)
        s.curve_ = []
        return s

    def features(self, inp: PolicyInput, field: DistanceField, flat_cells) -> np.ndarray:
        return candidate_features(inp, field, flat_cells, feature_radius_cells(inp.cell_size, self.feature_radius))

    def decision_function(self, F) -> np.ndarray:
        F = np.asarray(F, float)
        if F.ndim != 2 or F.shape[1] != len(FEATURE_NAMES):
            raise ValueError(f"features must be (n, {len(FEATURE_NAMES)})")
        return F @ self.weights_

    def predict(self, F) -> int:
        """Index of the best-scoring row (first one on ties)."""
        return int(np.argmax(self.decision_function(F)))

    # ---------------------------------------------------------------- training
    def fit_objective(self, objective):
        """Maximise ``objective(weights) -> float`` with CEM."""
        if self.population < 1 or self.n_iter < 0:
            raise ValueError("population must be >= 1 and n_iter >= 0")
        mask = self.mask_
        rng = np.random.default_rng(self.seed)
        mean = np.where(mask, np.asarray(self.init_mean, float), 0.0)
        std = np.where(mask, float(self.init_std), 0.0)
        n_elite = max(1, int(math.ceil(self.elite_frac * self.population)))
        self.curve_ = []
        for it in range(self.n_iter):
            noise = rng.standard_normal((self.population - 1, mean.size))
            pop = np.vstack([mean, mean + std * noise])
            scores = np.array([float(objective(w)) for w in pop])
            elite = np.argsort(-scores, kind="stable")[:n_elite]
            self.curve_.append({"iteration": it, "mean_reward": float(scores.mean()),
                                "elite_median": float(np.median(scores[elite])),
                                "best": float(scores[elite[0]])})
            log.info("CEM iteration %d: mean %.3f, elite median %.3f", it, scores.mean(), np.median(scores[elite]))
            mean = pop[elite].mean(axis=0)
            std = np.where(mask, np.maximum(pop[elite].std(axis=0), self.min_std), 0.0)
        self.weights_ = mean
        return self

    def fit(self, X, y=None, prior=None):
        """Train on a list of floorplans by rolling out full Learned episodes."""
        from .episode import EpisodeConfig, run_episode

        envs = list(X)
        if not envs:
            raise ValueError("training needs at least one floorplan")
        if prior is None:
            raise ValueError("training rollouts need a fitted PatchPrior")
        base = self.episode_config or EpisodeConfig()
        base = base.replace(policy="Learned")

        def objective(w):
            scorer = GoalScorer.from_weights(w, self.feature_mask)
            total = 0.0
            for i, grid in enumerate(envs):
                cfg = base.replace(start_seed=base.start_seed + i, noise_seed=base.noise_seed + i)
                res = run_episode(grid, cfg, prior=prior, scorer=scorer)
                total += res.total_reward
            return total / len(envs)

        return self.fit_objective(objective)

    # ------------------------------------------------------------- persistence
    def save(self, path):
        doc = {"format": WEIGHTS_FORMAT, "version": WEIGHTS_VERSION, "features": list(FEATURE_NAMES),
               "weights": [float(v) for v in self.weights_], "feature_mask": [bool(v) for v in self.mask_],
               "curve": getattr(self, "curve_", [])}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load(cls, path) -> "GoalScorer":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != WEIGHTS_FORMAT:
            raise ValueError(f"{path} is not a goal-scorer weights file")
        if doc.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {doc.get('version')}")
        if tuple(doc["features"]) != FEATURE_NAMES:
            raise ValueError("weights were trained on a different feature set")
        s = cls.from_weights(doc["weights"], doc["feature_mask"])
        s.curve_ = doc.get("curve", [])
        return s
