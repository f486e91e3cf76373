"""Local semantic maps: projection, completion of unseen cells and confidence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .env import AgentState, Observation, SemanticGrid, SensorConfig, sample_start, sense
from .validation import check_label_map, check_mask, check_same_shape

PRIOR_FORMAT = "semantic-explore/patch-prior"
PRIOR_VERSION = 1

# neighbour directions scanned when building a context key, (drow, dcol)
DIRECTIONS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_BITS = 6


@dataclass(frozen=True, eq=False)
class LocalMapBundle:
    """Every local layer for one step, all ``M x M`` and world aligned.

    ``origin`` is the global ``(row, col)`` of local cell ``(0, 0)``; ``pose``
    is the agent state the window is centred on.
    """

    m_proj: np.ndarray
    mask_us: np.ndarray
    m_pred: np.ndarray
    m_cmplt: np.ndarray
    m_conf: np.ndarray
    origin: tuple[int, int]
    pose: AgentState

    @property
    def size(self) -> int:
        return self.m_proj.shape[0]


def window_origin(state: AgentState, size: int, cell_size: float) -> tuple[int, int]:
    """Global cell of the top-left corner of a window centred on the agent cell."""
    r = int(math.floor(state.y / cell_size))
    c = int(math.floor(state.x / cell_size))
    return r - size // 2, c - size // 2


def project_local(obs: Observation, state: AgentState, size: int = 128, cell_size: float = 0.0375):
    """Write every ray sample into an ``size x size`` world-aligned window.

    Returns ``(m_proj, mask_us, origin)``. Within one observation the last
    sample written to a cell wins.
    """
    r0, c0 = window_origin(state, size, cell_size)
    m_proj = np.zeros((size, size), np.uint8)
    if obs.sample_dist.size:
        if obs.sample_cell is not None:
            rows = obs.sample_cell[:, 0] - r0
            cols = obs.sample_cell[:, 1] - c0
        else:
            ang = obs.angles[obs.sample_ray]
            rows = np.floor((state.y + obs.sample_dist * np.sin(ang)) / cell_size).astype(np.int64) - r0
            cols = np.floor((state.x + obs.sample_dist * np.cos(ang)) / cell_size).astype(np.int64) - c0
        inside = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
        flat = (rows * size + cols)[inside]
        mask_us = np.ones((size, size), np.uint8)
        _kernels.scatter_last(m_proj.ravel(), mask_us.ravel(), flat, obs.sample_label[inside].astype(np.uint8))
    else:
        mask_us = np.ones((size, size), np.uint8)
    return m_proj, mask_us, (r0, c0)


def gt_window(grid: SemanticGrid, origin: tuple[int, int], size: int) -> np.ndarray:
    r0, c0 = origin
    if r0 < 0 or c0 < 0 or r0 + size > grid.height or c0 + size > grid.width:
        raise ValueError(f"window at {origin} of size {size} leaves the {grid.shape} grid")
    return np.asarray(grid.labels[r0:r0 + size, c0:c0 + size])


def context_keys(m_proj: np.ndarray, radius: int, reach: int | None = None) -> np.ndarray:
    """Observed-neighbourhood key for every cell.

    Each of the eight compass directions is scanned up to ``reach`` steps for
    the nearest observed (non-void) cell; its label and a distance bucket
    (within ``radius``, within a quarter of ``reach``, within ``reach``) are
    packed into one byte per direction of a 64-bit key.
    """
    m = np.ascontiguousarray(m_proj, dtype=np.int64)
    reach = max(radius, reach or radius)
    return _kernels.pack_context_keys(m, radius, max(radius, reach // 4), reach)


def near_keys(full) -> np.ndarray:
    """Reduce full keys to the labels seen within ``radius`` (6 bits per direction)."""
    full = np.asarray(full, np.uint64)
    near = np.zeros(full.shape, np.int64)
    for d in range(8):
        byte = ((full >> np.uint64(8 * d)) & np.uint64(0xFF)).astype(np.int64)
        near |= np.where((byte & 3) == 1, byte >> 2, 0) << (_BITS * d)
    return near


def random_masks(rng, labels: np.ndarray, mask_prob: float):
    mask_us = (rng.random(labels.shape) < mask_prob).astype(np.uint8)
    return np.where(mask_us == 1, 0, labels).astype(np.uint8), mask_us


def _count_table(keys, labels, n_categories):
    """Sorted unique keys and their per-category count rows."""
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.zeros((uniq.size, n_categories))
    np.add.at(counts, (inv.ravel(), labels), 1.0)
    return uniq, counts


def _merge_tables(tables, n_categories, dtype):
    if not tables:
        return np.zeros(0, dtype), np.zeros((0, n_categories))
    keys = np.concatenate([k for k, _ in tables])
    rows = np.concatenate([c for _, c in tables])
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.zeros((uniq.size, n_categories))
    np.add.at(counts, inv.ravel(), rows)
    return uniq, counts


def _lookup(table_keys, queries):
    if table_keys.size == 0:
        return np.zeros(queries.size, np.int64), np.zeros(queries.size, bool)
    idx = np.minimum(np.searchsorted(table_keys, queries), table_keys.size - 1)
    return idx, table_keys[idx] == queries


class PatchPrior(BaseEstimator):
    """Context-conditioned category frequencies used to fill unseen cells.

    Fitting simulates partial observations of each training floorplan and
    counts, per observed-context key, the true label of every unseen cell.
    The predictive distribution for a key is its count vector plus ``alpha``
    pseudo-counts per category. Lookup tries the full key, then the near-only
    key, then falls back to the smoothed global marginal; pseudo-counts follow
    the next level down rather than a uniform distribution.

    Parameters
    ----------
    radius : int
        Steps per direction that count as the immediate neighbourhood.
    reach : int
        Steps per direction scanned for the full key (distance-bucketed).
    alpha : float
        Additive smoothing constant.
    mode : {"sensor", "random"}
        ``"sensor"`` projects simulated scans from random poses; ``"random"``
        masks cells of the whole grid independently with ``mask_prob``.
    n_views : int
        Simulated observations per training grid.
    window : int
        Local map size used in sensor mode.
    sensor : SensorConfig or None
        Sensor for sensor mode.
    seed : int
        Seed for poses, headings, masks and sensor noise.
    """

    def __init__(self, radius=2, reach=48, alpha=1.0, mode="sensor", n_views=12, mask_prob=0.5,
                 window=128, sensor=None, seed=0):
        self.radius = radius
        self.reach = reach
        self.alpha = alpha
        self.mode = mode
        self.n_views = n_views
        self.mask_prob = mask_prob
        self.window = window
        self.sensor = sensor
        self.seed = seed

    # ---------------------------------------------------------------- training
    def _views(self, grid: SemanticGrid, rng):
        if self.mode == "random":
            for _ in range(self.n_views):
                m_proj, mask_us = random_masks(rng, np.asarray(grid.labels), self.mask_prob)
                yield m_proj, mask_us, np.asarray(grid.labels)
        elif self.mode == "sensor":
            sensor = self.sensor or SensorConfig()
            for _ in range(self.n_views):
                start = sample_start(grid, int(rng.integers(2**31)))
                state = AgentState(start.x, start.y, float(rng.uniform(0, 2 * math.pi)), 0)
                obs = sense(state, grid, sensor, int(rng.integers(2**31)))
                m_proj, mask_us, origin = project_local(obs, state, self.window, grid.cell_size)
                yield m_proj, mask_us, gt_window(grid, origin, self.window)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    def fit(self, X, y=None):
        """Fit on a list of :class:`SemanticGrid` training floorplans."""
        corpus = list(X)
        if not corpus:
            raise ValueError("cannot train a patch prior on an empty corpus")
        n_cat = max(g.n_categories for g in corpus)
        rng = np.random.default_rng(self.seed)
        pairs = (view for grid in corpus for view in self._views(grid, rng))
        return self.fit_pairs(pairs, n_cat)

    def fit_pairs(self, pairs, n_categories: int):
        """Fit directly from ``(m_proj, mask_us, gt)`` triples."""
        if n_categories > 2**_BITS:
            raise ValueError(f"at most {2**_BITS} categories are supported")
        full_tables, near_tables = [], []
        for m_proj, mask_us, gt in pairs:
            check_same_shape(m_proj=m_proj, mask_us=mask_us, gt=gt)
            unseen = np.asarray(mask_us, bool)
            full = context_keys(m_proj, self.radius, self.reach)[unseen]
            labels = np.asarray(gt, np.int64)[unseen]
            full_tables.append(_count_table(full, labels, n_categories))
            near_tables.append(_count_table(near_keys(full), labels, n_categories))
        if not full_tables:
            raise ValueError("cannot train a patch prior on an empty corpus")
        self.keys_, self.counts_ = _merge_tables(full_tables, n_categories, np.uint64)
        self.near_keys_, self.near_counts_ = _merge_tables(near_tables, n_categories, np.int64)
        self.n_categories_ = n_categories
        return self

    # --------------------------------------------------------------- inference
    @property
    def marginal_(self) -> np.ndarray:
        """Laplace-smoothed category frequencies over all training cells."""
        check_is_fitted(self, "counts_")
        cached = getattr(self, "_marginal_cache", None)
        if cached is None or cached[0] is not self.counts_ or cached[1] != self.alpha:
            m = self.counts_.sum(axis=0) + self.alpha
            cached = (self.counts_, self.alpha, m / m.sum())
            self._marginal_cache = cached
        return cached[2]

    @property
    def n_samples_(self) -> int:
        return int(self.counts_.sum())

    def _smoothed(self, counts, base):
        # alpha pseudo-counts per category, spread according to the back-off distribution
        c = counts + self.alpha * self.n_categories_ * base
        return c / c.sum(axis=-1, keepdims=True)

    def proba_for_keys(self, full) -> np.ndarray:
        """Predictive distributions for explicit keys.

        A known full key is smoothed toward its near-key distribution (or the
        marginal), a known near key toward the marginal; keys unknown at both
        levels get the marginal itself.
        """
        check_is_fitted(self, "counts_")
        full = np.asarray(full, np.uint64)
        shape = full.shape
        full = full.ravel()
        out = np.empty((full.size, self.n_categories_))
        out[:] = self.marginal_
        idx, nhit = _lookup(self.near_keys_, near_keys(full))
        out[nhit] = self._smoothed(self.near_counts_[idx[nhit]], self.marginal_)
        idx, hit = _lookup(self.keys_, full)
        out[hit] = self._smoothed(self.counts_[idx[hit]], out[hit])
        return out.reshape(shape + (self.n_categories_,))

    def predict_proba(self, m_proj) -> np.ndarray:
        """Per-cell predictive distribution, shape ``m_proj.shape + (C,)``."""
        m_proj = check_label_map(m_proj, "m_proj")
        full = context_keys(m_proj, self.radius, self.reach)
        uniq, inv = np.unique(full, return_inverse=True)
        return self.proba_for_keys(uniq)[inv.reshape(full.shape)]

    def predict(self, m_proj) -> np.ndarray:
        return np.argmax(self.predict_proba(m_proj), axis=-1).astype(np.uint8)

    def transform(self, m_proj, mask_us=None):
        """Completed map: observed labels kept, unseen cells predicted."""
        m_proj = check_label_map(m_proj, "m_proj")
        mask_us = (m_proj == 0).astype(np.uint8) if mask_us is None else mask_us
        return complete_local(m_proj, mask_us, self)[1]

    # ------------------------------------------------------------- persistence
    def save(self, path):
        check_is_fitted(self, "counts_")
        params = self.get_params()
        params["sensor"] = None if self.sensor is None else vars(self.sensor)
        header = {"format": PRIOR_FORMAT, "version": PRIOR_VERSION, "params": params,
                  "n_categories": self.n_categories_}
        with open(path, "wb") as fh:
            np.savez_compressed(fh, header=np.frombuffer(json.dumps(header).encode(), np.uint8),
                                keys=self.keys_, counts=self.counts_,
                                near_keys=self.near_keys_, near_counts=self.near_counts_)

    @classmethod
    def load(cls, path) -> "PatchPrior":
        with np.load(Path(path)) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format") != PRIOR_FORMAT:
                raise ValueError(f"{path} is not a patch prior file")
            if header.get("version") != PRIOR_VERSION:
                raise ValueError(f"unsupported patch prior version {header.get('version')}")
            params = header["params"]
            if params.get("sensor") is not None:
                params["sensor"] = SensorConfig(**params["sensor"])
            prior = cls(**params)
            prior.keys_ = data["keys"]
            prior.counts_ = data["counts"]
            prior.near_keys_ = data["near_keys"]
            prior.near_counts_ = data["near_counts"]
        prior.n_categories_ = header["n_categories"]
        return prior

    @classmethod
    def from_counts(cls, keys, counts, alpha=1.0, radius=2, reach=None) -> "PatchPrior":
        """Build a prior from an explicit full-key table (mostly for tests)."""
        prior = cls(radius=radius, reach=reach if reach is not None else radius, alpha=alpha)
        keys = np.asarray(keys, np.uint64)
        counts = np.asarray(counts, float).reshape(keys.size, -1)
        order = np.argsort(keys)
        prior.keys_ = keys[order]
        prior.counts_ = counts[order]
        prior.n_categories_ = counts.shape[1]
        prior.near_keys_ = np.zeros(0, np.int64)
        prior.near_counts_ = np.zeros((0, prior.n_categories_))
        return prior


def blend(m_proj, mask_us, m_pred) -> np.ndarray:
    """Observed labels where ``mask_us`` is 0, predicted labels where it is 1."""
    return np.where(np.asarray(mask_us) == 1, m_pred, m_proj).astype(np.uint8)


def complete_local(m_proj, mask_us, prior: PatchPrior, proba=None):
    """Return ``(m_pred, m_cmplt)`` for one local projected map."""
    m_proj = check_label_map(m_proj, "m_proj")
    mask_us = check_mask(mask_us, "mask_us")
    check_same_shape(m_proj=m_proj, mask_us=mask_us)
    if proba is None:
        proba = prior.predict_proba(m_proj)
    m_pred = np.argmax(proba, axis=-1).astype(np.uint8)
    return m_pred, blend(m_proj, mask_us, m_pred)


def estimate_confidence(m_proj, mask_us, prior: PatchPrior, p_noise: float = 0.05, proba=None) -> np.ndarray:
    """Seen cells get ``1 - p_noise``; unseen cells the prior's top probability."""
    m_proj = check_label_map(m_proj, "m_proj")
    mask_us = check_mask(mask_us, "mask_us")
    check_same_shape(m_proj=m_proj, mask_us=mask_us)
    if proba is None:
        proba = prior.predict_proba(m_proj)
    conf = np.where(mask_us == 1, proba.max(axis=-1), 1.0 - p_noise)
    return np.clip(conf, 0.0, 1.0)


def accuracy_map(m_cmplt, gt_window) -> np.ndarray:
    """1 where the completed label matches ground truth, else 0."""
    m_cmplt = np.asarray(m_cmplt)
    gt_window = np.asarray(gt_window)
    check_same_shape(m_cmplt=m_cmplt, gt_window=gt_window)
    return (m_cmplt == gt_window).astype(np.uint8)


def build_local_bundle(obs: Observation, state: AgentState, prior: PatchPrior, *, size: int = 128,
                       cell_size: float = 0.0375, p_noise: float = 0.05) -> LocalMapBundle:
    m_proj, mask_us, origin = project_local(obs, state, size, cell_size)
    proba = prior.predict_proba(m_proj)
    m_pred, m_cmplt = complete_local(m_proj, mask_us, prior, proba=proba)
    m_conf = estimate_confidence(m_proj, mask_us, prior, p_noise, proba=proba)
    return LocalMapBundle(m_proj, mask_us, m_pred, m_cmplt, m_conf, origin, state)
