"""Confidence-aware accumulation of local bundles into global maps."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import AgentState
from .local_mapper import LocalMapBundle, window_origin
from .validation import GeometryError

BUNDLE_FORMAT = "semantic-explore/global-maps"
BUNDLE_VERSION = 1


@dataclass(eq=False)
class GlobalMapBundle:
    """Full projected, completed and confidence maps for one episode.

    ``origin`` is the world coordinate (x, y) in meters of the corner of cell
    ``(0, 0)``; cell ``(r, c)`` spans ``x in origin_x + [c, c+1) * cell_size``.
    """

    M_proj: np.ndarray
    M_cmplt: np.ndarray
    M_conf: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def empty(cls, shape, cell_size: float, origin=(0.0, 0.0)) -> "GlobalMapBundle":
        return cls(np.zeros(shape, np.uint8), np.zeros(shape, np.uint8), np.zeros(shape, np.float64),
                   float(cell_size), tuple(origin))

    @property
    def shape(self) -> tuple[int, int]:
        return self.M_proj.shape

    def copy(self) -> "GlobalMapBundle":
        return GlobalMapBundle(self.M_proj.copy(), self.M_cmplt.copy(), self.M_conf.copy(),
                               self.cell_size, self.origin)

    def __eq__(self, other):
        if not isinstance(other, GlobalMapBundle):
            return NotImplemented
        return (
            self.cell_size == other.cell_size
            and tuple(self.origin) == tuple(other.origin)
            and np.array_equal(self.M_proj, other.M_proj)
            and np.array_equal(self.M_cmplt, other.M_cmplt)
            and np.array_equal(self.M_conf, other.M_conf)
        )

    # ------------------------------------------------------------- persistence
    def save(self, path):
        header = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION,
                  "origin": list(self.origin), "cell_size": self.cell_size}
        with open(path, "wb") as fh:
            np.savez_compressed(fh, header=np.frombuffer(json.dumps(header).encode(), np.uint8),
                                M_proj=self.M_proj, M_cmplt=self.M_cmplt, M_conf=self.M_conf)

    @classmethod
    def load(cls, path) -> "GlobalMapBundle":
        with np.load(Path(path)) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format") != BUNDLE_FORMAT:
                raise ValueError(f"{path} is not a global map file")
            if header.get("version") != BUNDLE_VERSION:
                raise ValueError(f"unsupported global map version {header.get('version')}")
            return cls(data["M_proj"], data["M_cmplt"], data["M_conf"],
                       float(header["cell_size"]), tuple(header["origin"]))


def _window(shape, origin, size):
    r0, c0 = origin
    if r0 < 0 or c0 < 0 or r0 + size > shape[0] or c0 + size > shape[1]:
        raise GeometryError(f"window anchored at cell {tuple(origin)} with size {size} leaves the {shape} global map")
    return slice(r0, r0 + size), slice(c0, c0 + size)


def fuse(global_maps: GlobalMapBundle, local: LocalMapBundle, inplace: bool = False):
    """Stitch one local bundle into the global maps.

    A local cell replaces the global confidence and completed label only when
    its confidence is strictly higher (ties keep the incumbent). Observed
    labels reach ``M_proj`` where the local cell won, and also where the global
    projected cell is still void, so an observation is never discarded in
    favour of nothing. Void labels never overwrite.

    Returns ``(global_maps, mask_conf)``.
    """
    out = global_maps if inplace else global_maps.copy()
    win = _window(out.shape, local.origin, local.size)
    g_conf = out.M_conf[win]
    g_cmplt = out.M_cmplt[win]
    g_proj = out.M_proj[win]
    mask_conf = local.m_conf > g_conf
    g_conf[mask_conf] = local.m_conf[mask_conf]
    g_cmplt[mask_conf] = local.m_cmplt[mask_conf]
    seen = (local.mask_us == 0) & (local.m_proj != 0)
    write = seen & (mask_conf | (g_proj == 0))
    g_proj[write] = local.m_proj[write]
    return out, mask_conf.astype(np.uint8)


def crop_window(global_maps: GlobalMapBundle, center: AgentState, size: int):
    """Copies of the ``size x size`` crops of (M_proj, M_cmplt, M_conf) around ``center``."""
    origin = window_origin(center, size, global_maps.cell_size)
    win = _window(global_maps.shape, origin, size)
    return (global_maps.M_proj[win].copy(), global_maps.M_cmplt[win].copy(),
            global_maps.M_conf[win].copy())
