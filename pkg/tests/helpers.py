"""Random map factories shared by the unit and acceptance tests."""

import numpy as np

from semantic_explore.env import AgentState
from semantic_explore.full_mapper import GlobalMapBundle
from semantic_explore.local_mapper import LocalMapBundle, blend


def random_local(rng, size, origin, n_categories=6, conf_levels=None):
    """A self-consistent local bundle with random labels, mask and confidence."""
    mask_us = (rng.random((size, size)) < 0.5).astype(np.uint8)
    m_proj = np.where(mask_us == 1, 0, rng.integers(0, n_categories, (size, size))).astype(np.uint8)
    m_pred = rng.integers(0, n_categories, (size, size)).astype(np.uint8)
    if conf_levels is None:
        m_conf = rng.random((size, size))
    else:
        m_conf = rng.choice(np.asarray(conf_levels, float), (size, size))
    m_conf[rng.random((size, size)) < 0.1] = 0.0
    return LocalMapBundle(m_proj, mask_us, m_pred, blend(m_proj, mask_us, m_pred), m_conf,
                          tuple(int(v) for v in origin), AgentState(0.0, 0.0, 0.0))


def random_sequence(rng, shape=(24, 24), size=8, length=6, cell_size=0.1, **kw):
    g = GlobalMapBundle.empty(shape, cell_size)
    locals_ = []
    for _ in range(length):
        origin = (rng.integers(0, shape[0] - size + 1), rng.integers(0, shape[1] - size + 1))
        locals_.append(random_local(rng, size, origin, **kw))
    return g, locals_
