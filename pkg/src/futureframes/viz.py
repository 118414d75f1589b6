"""Colour encodings for flow fields and provenance maps."""
from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import hsv_to_rgb

from .compose import BACKGROUND, DIFFUSED, HOLE, PROPAGATED

TAG_COLORS = {
    BACKGROUND: (0.55, 0.55, 0.55),
    HOLE: (0.0, 0.0, 0.0),
    PROPAGATED: (0.15, 0.35, 0.95),
    DIFFUSED: (0.9, 0.1, 0.8),
}


def flow_hsv(flow, max_magnitude: float | None = None) -> np.ndarray:
    """(H, W, 3) HSV: hue is the flow angle, saturation the normalised magnitude."""
    flow = np.asarray(flow, dtype=np.float64)
    dx, dy = flow[..., 0], flow[..., 1]
    mag = np.hypot(dx, dy)
    top = float(mag.max()) if max_magnitude is None else float(max_magnitude)
    hue = np.mod(np.arctan2(dy, dx), 2.0 * np.pi) / (2.0 * np.pi)
    sat = np.clip(mag / top, 0.0, 1.0) if top > 0 else np.zeros_like(mag)
    return np.stack([hue, sat, np.ones_like(mag)], axis=-1)


def flow_to_color(flow, max_magnitude: float | None = None) -> np.ndarray:
    """Colour-wheel rendering in [0, 1]; zero flow is white."""
    return hsv_to_rgb(flow_hsv(flow, max_magnitude))


def provenance_to_color(prov) -> np.ndarray:
    """Fixed colours for the negative tags and background, tab10 for object ids."""
    prov = np.asarray(prov)
    out = np.zeros(prov.shape + (3,))
    for tag, col in TAG_COLORS.items():
        out[prov == tag] = col
    cmap = colormaps["tab10"]
    for oid in np.unique(prov[prov > 0]):
        out[prov == oid] = cmap((int(oid) - 1) % 10)[:3]
    return out
