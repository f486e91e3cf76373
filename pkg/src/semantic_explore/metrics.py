"""Coverage and accurate-semantic-coverage metrics in square meters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .env import SemanticGrid
from .full_mapper import GlobalMapBundle
from .validation import GeometryError


@dataclass
class Metrics:
    """Final areas plus optional per-step series of the same four values."""

    cov_p: float = 0.0
    asc_p: float = 0.0
    cov_c: float = 0.0
    asc_c: float = 0.0
    series: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {"cov_p": self.cov_p, "asc_p": self.asc_p, "cov_c": self.cov_c, "asc_c": self.asc_c}

    def to_dict(self) -> dict:
        return asdict(self)


def _counts(M_proj, M_cmplt, M_conf, gt):
    proj = M_proj != 0
    cmplt = (M_conf > 0) & (M_cmplt != 0)
    return np.array([
        np.count_nonzero(proj),
        np.count_nonzero(proj & (M_proj == gt)),
        np.count_nonzero(cmplt),
        np.count_nonzero(cmplt & (M_cmplt == gt)),
    ], np.int64)


def _expected_asc(M_cmplt, M_conf):
    return float(M_conf[(M_conf > 0) & (M_cmplt != 0)].sum())


def compute_metrics(global_maps: GlobalMapBundle, gt: SemanticGrid) -> Metrics:
    """CovP, ASCP, CovC, ASCC from scratch.

    Projected coverage counts non-void ``M_proj`` cells; completed coverage
    counts non-void ``M_cmplt`` cells that some local map has reached
    (``M_conf > 0``). The accurate variants also require the label to match
    ground truth.
    """
    if global_maps.shape != gt.shape:
        raise GeometryError(f"global maps {global_maps.shape} vs ground truth {gt.shape}")
    if abs(global_maps.cell_size - gt.cell_size) > 1e-12:
        raise GeometryError("global maps and ground truth use different cell sizes")
    area = global_maps.cell_size ** 2
    c = _counts(global_maps.M_proj, global_maps.M_cmplt, global_maps.M_conf, gt.labels)
    return Metrics(*(float(v) * area for v in c))


class MetricTracker:
    """Keeps the four counts current by re-counting only the window a fuse touched."""

    def __init__(self, gt: SemanticGrid, global_maps: GlobalMapBundle):
        self.gt = gt
        self.maps = global_maps
        self.area = gt.cell_size ** 2
        self.counts = _counts(global_maps.M_proj, global_maps.M_cmplt, global_maps.M_conf, gt.labels)
        self.expected = _expected_asc(global_maps.M_cmplt, global_maps.M_conf)
        self._pending = None

    def _window_state(self, win):
        m = self.maps
        return (_counts(m.M_proj[win], m.M_cmplt[win], m.M_conf[win], self.gt.labels[win]),
                _expected_asc(m.M_cmplt[win], m.M_conf[win]))

    def before(self, origin, size):
        win = (slice(origin[0], origin[0] + size), slice(origin[1], origin[1] + size))
        self._pending = (win, self._window_state(win))

    def after(self):
        win, (c0, e0) = self._pending
        c1, e1 = self._window_state(win)
        self.counts += c1 - c0
        self.expected += e1 - e0
        self._pending = None

    def snapshot(self) -> Metrics:
        return Metrics(*(float(v) * self.area for v in self.counts))

    @property
    def expected_asc(self) -> float:
        """Confidence-weighted completed coverage in m², usable without ground truth."""
        return self.expected * self.area
