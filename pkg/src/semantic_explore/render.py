"""Palette-indexed map images and their legends."""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image

from .env import SemanticGrid, category_names
from .full_mapper import GlobalMapBundle

# fixed colours for the first ids; later ids get evenly spaced hues
_BASE_COLOURS = [
    (255, 255, 255),  # void
    (196, 196, 196),  # floor
    (64, 64, 64),     # wall
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (188, 189, 34), (23, 190, 207),
]
MAX_CATEGORIES = 64

_CONF_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_CONF_RGB = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def palette(n: int = MAX_CATEGORIES) -> np.ndarray:
    """``(n, 3)`` uint8 colour table indexed by category id."""
    colours = list(_BASE_COLOURS[:n])
    extra = n - len(colours)
    for i in range(max(extra, 0)):
        h = (i * 0.618033988749895) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.65, 0.85 if i % 2 else 0.65)
        colours.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return np.array(colours, dtype=np.uint8)


def label_image(labels: np.ndarray) -> Image.Image:
    labels = np.asarray(labels)
    if labels.size and labels.max() >= MAX_CATEGORIES:
        raise ValueError(f"labels must be below {MAX_CATEGORIES}")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    pal = np.zeros((256, 3), np.uint8)
    pal[:MAX_CATEGORIES] = palette()
    img.putpalette(pal.ravel().tolist())
    return img


def read_label_image(path) -> np.ndarray:
    """Category ids back from a palette image written by :func:`save_labels`."""
    with Image.open(path) as img:
        if img.mode != "P":
            raise ValueError(f"{path} is not a palette image")
        return np.array(img, dtype=np.uint8)


def save_labels(labels: np.ndarray, path) -> Path:
    path = Path(path)
    label_image(labels).save(path, format="PNG", optimize=False)
    return path


def conf_heatmap(conf: np.ndarray) -> np.ndarray:
    """RGB rendering of confidence values in [0, 1] (dark purple to yellow)."""
    conf = np.clip(np.asarray(conf, float), 0.0, 1.0)
    rgb = np.stack([np.interp(conf, _CONF_STOPS, _CONF_RGB[:, k]) for k in range(3)], axis=-1)
    return np.round(rgb).astype(np.uint8)


def legend_lines(n_categories: int) -> list[str]:
    pal = palette(n_categories)
    return [f"{i}\t{name}\t#{r:02x}{g:02x}{b:02x}"
            for i, (name, (r, g, b)) in enumerate(zip(category_names(n_categories), pal))]


def write_legend(n_categories: int, path) -> Path:
    path = Path(path)
    path.write_text("id\tname\tcolour\n" + "\n".join(legend_lines(n_categories)) + "\n")
    return path


def export_floorplan(grid: SemanticGrid, path) -> tuple[Path, Path]:
    """Indexed image of a ground-truth grid plus a label-table text file."""
    path = Path(path)
    img = save_labels(grid.labels, path)
    table = write_legend(grid.n_categories, path.with_suffix(".labels.txt"))
    return img, table


def export_maps(global_maps: GlobalMapBundle, gt: SemanticGrid | None, path) -> dict:
    """Write M_proj, M_cmplt, M_conf (heatmap) and optionally gt, plus a legend.

    ``path`` is a directory; it is created if needed. Returns the written
    paths keyed by layer name.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    n_cat = gt.n_categories if gt is not None else int(max(global_maps.M_proj.max(), global_maps.M_cmplt.max(), 2)) + 1
    files = {
        "M_proj": save_labels(global_maps.M_proj, out / "M_proj.png"),
        "M_cmplt": save_labels(global_maps.M_cmplt, out / "M_cmplt.png"),
    }
    conf_path = out / "M_conf.png"
    Image.fromarray(conf_heatmap(global_maps.M_conf), mode="RGB").save(conf_path, format="PNG")
    files["M_conf"] = conf_path
    if gt is not None:
        files["gt"] = save_labels(gt.labels, out / "gt.png")
    files["legend"] = write_legend(n_cat, out / "legend.txt")
    return files
