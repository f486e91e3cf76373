"""Input checks shared by the mapping and planning code."""

import numpy as np


class GeometryError(ValueError):
    """Arrays or windows that do not line up."""


def check_label_map(a, name="labels") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype.kind not in "iub":
        raise ValueError(f"{name} must hold integer labels, got {a.dtype}")
    if a.size and a.min() < 0:
        raise ValueError(f"{name} holds negative labels")
    return a.astype(np.uint8, copy=False)


def check_mask(a, name="mask") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype == bool:
        return a.view(np.uint8)
    if a.size and (a.min() < 0 or a.max() > 1 or (a.dtype.kind == "f" and not np.isin(a, (0, 1)).all())):
        raise ValueError(f"{name} must be binary")
    return a.astype(np.uint8, copy=False)


def check_unit_interval(a, name="values") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size and (np.isnan(a).any() or a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return a


def check_same_shape(**arrays):
    shapes = {k: np.shape(v) for k, v in arrays.items()}
    if len(set(shapes.values())) > 1:
        raise GeometryError(f"shape mismatch: {shapes}")
