"""Composition of predicted background and objects, then hole filling.

Provenance tags: 0 background, positive values are object ids, and the
negative values below mark holes and the two kinds of inpainted pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decompose import inpaint_background
from .flow_energy import fb_consistency
from .imagecore import sample_bilinear
from .objects import ObjectLayer, place_layer

BACKGROUND = 0
HOLE = -1
PROPAGATED = -2
DIFFUSED = -3

TAG_NAMES = {BACKGROUND: "background", HOLE: "hole", PROPAGATED: "propagated", DIFFUSED: "diffused"}


@dataclass
class CompositeFrame:
    image: np.ndarray
    hole: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.hole = np.asarray(self.hole, dtype=bool)
        self.provenance = np.asarray(self.provenance, dtype=np.int32)
        if self.hole.shape != self.image.shape[:2] or self.provenance.shape != self.hole.shape:
            raise ValueError("composite rasters disagree in size")
        if not np.array_equal(self.hole, self.provenance == HOLE):
            raise ValueError("hole mask and provenance disagree")

    def copy(self) -> "CompositeFrame":
        return CompositeFrame(self.image.copy(), self.hole.copy(), self.provenance.copy())

    @property
    def object_pixels(self) -> np.ndarray:
        return self.provenance > 0


def depth_order(tracks: list) -> list:
    """Paste order, far to near.

    An object whose bounding box reaches lower in the last input frame is
    nearer and goes later; ties go to the larger mask, then the higher id.
    """
    return sorted(tracks, key=lambda tr: (tr.bbox()[3], tr.area, tr.id))


def _as_layer(obj) -> ObjectLayer:
    if isinstance(obj, ObjectLayer):
        return obj
    crop, mask, pos = obj
    return ObjectLayer(np.asarray(crop, dtype=np.float64), np.asarray(mask, dtype=bool), tuple(pos))


def paste(background, bg_valid, objects: list, ids: list | None = None) -> CompositeFrame:
    """Overwrite the background with objects in the given (far-to-near) order.

    ``objects`` holds ObjectLayer instances or (crop, mask, (x0, y0)) tuples.
    Parts falling outside the frame are clipped.
    """
    background = np.asarray(background, dtype=np.float64)
    bg_valid = np.asarray(bg_valid, dtype=bool)
    if bg_valid.shape != background.shape[:2]:
        raise ValueError("background validity mask has the wrong size")
    ids = list(range(1, len(objects) + 1)) if ids is None else list(ids)
    if len(ids) != len(objects) or any(i < 1 for i in ids):
        raise ValueError("object ids must be positive, one per object")
    image = background.copy()
    prov = np.where(bg_valid, BACKGROUND, HOLE).astype(np.int32)
    for oid, obj in zip(ids, objects):
        img, m = place_layer(_as_layer(obj), background.shape)
        image[m] = img[m]
        prov[m] = oid
    image[prov == HOLE] = 0.0
    return CompositeFrame(image, prov == HOLE, prov)


def _eligible_footprint(ok: np.ndarray, xs, ys) -> np.ndarray:
    """True where the bilinear footprint lies in the frame and only touches ``ok`` pixels."""
    H, W = ok.shape
    inside = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    x0 = np.clip(np.floor(np.where(inside, xs, 0)).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.floor(np.where(inside, ys, 0)).astype(np.int64), 0, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = np.where(inside, xs, 0) - x0
    fy = np.where(inside, ys, 0) - y0
    good = inside & ok[y0, x0]
    good &= (fx <= 0) | ok[y0, x1]
    good &= (fy <= 0) | ok[y1, x0]
    good &= (fx <= 0) | (fy <= 0) | ok[y1, x1]
    return good


def _propagate(dst: CompositeFrame, src: CompositeFrame, flow, valid, use_objects: bool) -> int:
    """Fill holes of ``dst`` from ``src`` along ``flow``; returns pixels filled."""
    ys, xs = np.nonzero(dst.hole & valid)
    if len(xs) == 0:
        return 0
    f = flow[ys, xs]
    sx = xs + f[:, 0]
    sy = ys + f[:, 1]
    ok = ~src.hole if use_objects else (~src.hole & ~src.object_pixels)
    good = _eligible_footprint(ok, sx, sy)
    if not good.any():
        return 0
    ys, xs = ys[good], xs[good]
    dst.image[ys, xs] = sample_bilinear(src.image, sx[good], sy[good])
    dst.hole[ys, xs] = False
    dst.provenance[ys, xs] = PROPAGATED
    return int(good.sum())


def video_inpaint(
    composites: list,
    flows_fwd: list,
    flows_bwd: list,
    a: float = 3.0,
    b: float = 0.05,
    max_iterations: int | None = None,
    use_objects: bool = False,
    trace: list | None = None,
) -> list:
    """Bidirectional flow-guided propagation into holes.

    ``flows_fwd[i]`` maps frame i to i+1 and ``flows_bwd[i]`` maps frame i+1
    back to i. A hole pixel copies from the adjacent frame when its flow
    passes the forward-backward check and the bilinear footprint there is
    fully known background (object pixels are skipped unless
    ``use_objects``). Each iteration runs a forward pass (sources i+1) then a
    backward pass (sources i-1), each against a snapshot of the previous
    state. Repeats stop once nothing changes, or after as many iterations as
    there are frames. ``trace`` receives the total hole area after each pass.
    """
    n = len(composites)
    if len(flows_fwd) != n - 1 or len(flows_bwd) != n - 1:
        raise ValueError(f"need {n - 1} forward and backward flows for {n} frames")
    out = [c.copy() for c in composites]
    if n < 2:
        return out
    valid_f = [fb_consistency(flows_fwd[i], flows_bwd[i], a, b)[1] for i in range(n - 1)]
    valid_b = [fb_consistency(flows_bwd[i], flows_fwd[i], a, b)[1] for i in range(n - 1)]
    iterations = n if max_iterations is None else max_iterations
    if trace is not None:
        trace.append(sum(int(c.hole.sum()) for c in out))
    for _ in range(iterations):
        changed = 0
        snap = [c.copy() for c in out]
        for i in range(n - 1):
            changed += _propagate(out[i], snap[i + 1], flows_fwd[i], valid_f[i], use_objects)
        if trace is not None:
            trace.append(sum(int(c.hole.sum()) for c in out))
        snap = [c.copy() for c in out]
        for i in range(1, n):
            changed += _propagate(out[i], snap[i - 1], flows_bwd[i - 1], valid_b[i - 1], use_objects)
        if trace is not None:
            trace.append(sum(int(c.hole.sum()) for c in out))
        if changed == 0:
            break
    return out


def final_fill(composite: CompositeFrame, smooth_iters: int = 30) -> CompositeFrame:
    """Diffuse whatever holes remain, preferring background pixels as sources."""
    if not composite.hole.any():
        return composite.copy()
    if composite.hole.all():
        raise ValueError("cannot fill a frame that is entirely hole")
    sources = ~composite.hole & ~composite.object_pixels
    image = inpaint_background(composite.image, composite.hole, sources=sources, smooth_iters=smooth_iters)
    prov = composite.provenance.copy()
    prov[composite.hole] = DIFFUSED
    return CompositeFrame(image, np.zeros_like(composite.hole), prov)
