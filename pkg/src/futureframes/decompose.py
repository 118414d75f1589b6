"""Scene decomposition: dominant motion, moving-region detection, tracks, hole filling.

Moving regions are found by thresholding each pixel's deviation from the
frame's dominant (camera) affine motion. Tracks are seeded from connected
components of the last input frame's moving mask and carried to earlier
frames by backward-warping the masks along the consecutive flows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import affine as af
from .imagecore import (
    as_flow,
    backward_warp,
    dilate,
    label_components,
    open_close,
    pixel_grid,
    sample_bilinear,
)
from .metrics import WIN_SIZE, ssim
from .scene import SceneDataError

TAU_MOVE = 1.5
MIN_AREA = 16
SSIM_THRESHOLD = 0.4


class DegenerateMotionError(ValueError):
    """Raised when an affine fit is under-determined or non-invertible."""


@dataclass(frozen=True)
class GlobalMotion:
    """Affine map from frame-k pixel coordinates to frame-(k+1) coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(m)):
            raise DegenerateMotionError("motion has non-finite entries")
        if abs(af.det2(m)) <= 1e-6:
            raise DegenerateMotionError(f"motion is not invertible (det={af.det2(m):.3g})")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "GlobalMotion":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "GlobalMotion":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    @property
    def h(self) -> np.ndarray:
        return af.to_h(self.matrix)

    @property
    def det(self) -> float:
        return af.det2(self.matrix)

    def params(self) -> np.ndarray:
        return self.matrix.reshape(6).copy()

    def inverse(self) -> "GlobalMotion":
        return GlobalMotion(af.from_h(np.linalg.inv(self.h)))

    def then(self, other: "GlobalMotion") -> "GlobalMotion":
        """Apply ``self`` first, then ``other``."""
        return GlobalMotion(af.from_h(other.h @ self.h))

    def flow(self, height: int, width: int) -> np.ndarray:
        return af.flow_from_affine(self.matrix, height, width)


def fit_global_motion(flow, exclude=None, inlier_px: float = 3.0, rounds: int = 2) -> GlobalMotion:
    """Least-squares affine fit to the correspondences p -> p + flow(p).

    Pixels in ``exclude`` are ignored. After the initial fit, ``rounds``
    refits keep only correspondences whose residual is below ``inlier_px``.
    """
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    keep = np.ones((h, w), dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    if keep.sum() < 6:
        raise DegenerateMotionError(f"need >= 6 usable pixels, got {int(keep.sum())}")
    xs, ys = pixel_grid(h, w)
    src = np.column_stack([xs[keep], ys[keep]])
    dst = src + flow[keep]
    try:
        m = af.fit_affine(src, dst)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMotionError(str(exc)) from exc
    for _ in range(rounds):
        px, py = af.apply(m, src[:, 0], src[:, 1])
        inl = np.hypot(px - dst[:, 0], py - dst[:, 1]) < inlier_px
        if inl.all() or inl.sum() < 6:
            break
        try:
            m = af.fit_affine(src[inl], dst[inl])
        except np.linalg.LinAlgError:
            break
    return GlobalMotion(m)


def motion_residual(flow, motion: GlobalMotion) -> np.ndarray:
    flow = as_flow(flow)
    d = flow - motion.flow(*flow.shape[:2])
    return np.hypot(d[..., 0], d[..., 1])


def _fill_holes(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_fill_holes(mask)


def transport_mask(mask: np.ndarray, flow) -> np.ndarray:
    """Carry a frame-k mask to frame k+1 along forward ``flow``.

    Each connected component moves by its own affine fit and is resampled
    through the inverse map; tiny components are forward-splatted.
    """
    flow = as_flow(flow)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    labels, n = label_components(mask)
    xs, ys = pixel_grid(h, w)
    for c in range(1, n + 1):
        comp = labels == c
        try:
            motion = fit_global_motion(flow, exclude=~comp)
        except DegenerateMotionError:
            cy, cx = np.nonzero(comp)
            tx = np.rint(cx + flow[cy, cx, 0]).astype(int)
            ty = np.rint(cy + flow[cy, cx, 1]).astype(int)
            ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
            out[ty[ok], tx[ok]] = True
            continue
        sx, sy = af.apply(motion.inverse().matrix, xs, ys)
        inside = (sx > -0.5) & (sx < w - 0.5) & (sy > -0.5) & (sy < h - 0.5)
        out |= inside & (sample_bilinear(comp.astype(np.float64), sx, sy) >= 0.5)
    return out


def detect_moving(scene, tau_move: float = TAU_MOVE, radius: int = 1) -> list[np.ndarray]:
    """Moving-region masks for every input frame.

    Per flow, pixels deviating from the dominant affine motion by more than
    ``tau_move`` px are marked, cleaned by open/close, and confirmed by a
    two-frame vote against the neighbouring frame's mask carried along the
    flow. The last input frame has no outgoing flow, so its mask is the
    previous frame's mask carried forward.
    """
    t = scene.t
    flows = scene.input_flows()
    if t < 2 or len(flows) < t - 1:
        raise SceneDataError(f"need {t - 1} consecutive input flows, got {len(flows)}")
    raw = []
    for f in flows:
        motion = fit_global_motion(f)
        m = motion_residual(f, motion) > tau_move
        raw.append(_fill_holes(open_close(m, radius)))
    masks = []
    for k in range(t - 1):
        if k >= 1:
            partner = transport_mask(raw[k - 1], flows[k - 1])
        elif t - 1 >= 2:
            partner = backward_warp(raw[1].astype(np.float64), flows[0])[0] >= 0.5
        else:
            partner = None
        m = raw[k] if partner is None else raw[k] & dilate(partner, radius)
        masks.append(m)
    masks.append(_fill_holes(transport_mask(masks[-1], flows[t - 2])))
    return masks


@dataclass
class ObjectTrack:
    """A rigid moving object observed over the input frames.

    ``masks[k]`` is the object's mask in input frame k; the appearance crop
    (with a one-pixel zero-mask border) is taken from the last input frame
    and placed at ``origin`` = (x0, y0) in frame coordinates.
    """

    id: int
    masks: list
    appearance: np.ndarray
    appearance_mask: np.ndarray
    origin: tuple
    frame_shape: tuple
    scores: list = field(default_factory=list)

    @property
    def last(self) -> int:
        return len(self.masks) - 1

    def bbox(self, k: int | None = None):
        """Inclusive (x0, y0, x1, y1) of the mask at frame k (default last)."""
        m = self.masks[self.last if k is None else k]
        ys, xs = np.nonzero(m)
        if len(xs) == 0:
            return None
        return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())

    def centroid(self, k: int | None = None):
        m = self.masks[self.last if k is None else k]
        ys, xs = np.nonzero(m)
        if len(xs) == 0:
            return None
        return float(xs.mean()), float(ys.mean())

    @property
    def centroids(self) -> list:
        return [self.centroid(k) for k in range(len(self.masks))]

    @property
    def center(self) -> tuple:
        return self.centroid()

    @property
    def area(self) -> int:
        return int(self.masks[self.last].sum())

    @property
    def diagonal(self) -> float:
        x0, y0, x1, y1 = self.bbox()
        return float(np.hypot(x1 - x0 + 1, y1 - y0 + 1))

    @property
    def depth_key(self) -> float:
        """Negative bottom row at the last input frame (lower in image = nearer)."""
        return -float(self.bbox()[3])


def _crop_with_border(frame, mask):
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    x0, x1 = max(xs.min() - 1, 0), min(xs.max() + 1, w - 1)
    y0, y1 = max(ys.min() - 1, 0), min(ys.max() + 1, h - 1)
    crop = frame[y0 : y1 + 1, x0 : x1 + 1].copy()
    cmask = mask[y0 : y1 + 1, x0 : x1 + 1].copy()
    crop[~cmask] = 0.0
    return crop, cmask, (int(x0), int(y0))


def extract_tracks(scene, moving: list, min_area: int = MIN_AREA) -> list[ObjectTrack]:
    """Seed one track per sizeable component of the last frame's moving mask."""
    t = scene.t
    flows = scene.input_flows()
    last = t - 1
    labels, n = label_components(moving[last])
    seeds = [labels == c for c in range(1, n + 1)]
    seeds = [m for m in seeds if m.sum() > min_area]
    if not seeds:
        return []
    per_track = [[None] * t for _ in seeds]
    for i, m in enumerate(seeds):
        per_track[i][last] = m
    for k in range(last - 1, -1, -1):
        occ = np.stack(
            [backward_warp(per_track[i][k + 1].astype(np.float64), flows[k])[0] for i in range(len(seeds))]
        )
        best = np.argmax(occ, axis=0)  # ties resolve to the lower id
        claimed = (occ.max(axis=0) >= 0.5) & moving[k]
        for i in range(len(seeds)):
            per_track[i][k] = claimed & (best == i)
    frame = scene.frames[last]
    tracks = []
    for i, masks in enumerate(per_track):
        crop, cmask, origin = _crop_with_border(frame, masks[last])
        tracks.append(
            ObjectTrack(
                id=i + 1,
                masks=masks,
                appearance=crop,
                appearance_mask=cmask,
                origin=origin,
                frame_shape=frame.shape,
            )
        )
    return tracks


def _resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    sx = (xs + 0.5) * w / width - 0.5
    sy = (ys + 0.5) * h / height - 0.5
    return sample_bilinear(img, sx, sy)


def track_ssim_scores(track: ObjectTrack, frames: list) -> list[float]:
    """SSIM between the last-frame box crop and each earlier frame's box crop."""
    ref_box = track.bbox()
    x0, y0, x1, y1 = ref_box
    ref = frames[track.last][y0 : y1 + 1, x0 : x1 + 1]
    bh, bw = ref.shape[:2]
    win = min(WIN_SIZE, bh, bw)
    win = win if win % 2 == 1 else win - 1
    scores = []
    for k in range(track.last):
        box = track.bbox(k)
        if box is None:
            continue
        a0, b0, a1, b1 = box
        crop = _resize_bilinear(frames[k][b0 : b1 + 1, a0 : a1 + 1], bh, bw)
        scores.append(ssim(ref, crop, win_size=max(win, 1)))
    return scores


def track_check(track: ObjectTrack, frames: list, threshold: float = SSIM_THRESHOLD) -> bool:
    """Accept a track if every earlier crop resembles the last one (SSIM >= threshold)."""
    scores = track_ssim_scores(track, frames)
    track.scores = scores
    return not scores or min(scores) >= threshold


_NEIGHBOURS = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])


def _neighbour_sums(values: np.ndarray, valid: np.ndarray):
    v = valid.astype(np.float64)
    counts = ndimage.correlate(v, _NEIGHBOURS, mode="constant", cval=0.0)
    if values.ndim == 3:
        sums = np.stack(
            [ndimage.correlate(values[..., c] * v, _NEIGHBOURS, mode="constant", cval=0.0) for c in range(values.shape[2])],
            axis=-1,
        )
    else:
        sums = ndimage.correlate(values * v, _NEIGHBOURS, mode="constant", cval=0.0)
    return sums, counts


def inpaint_background(frame, holes, sources=None, smooth_iters: int = 30) -> np.ndarray:
    """Fill hole pixels by neighbourhood diffusion.

    Holes are filled front by front with the mean of their already-known
    8-neighbours, then relaxed for ``smooth_iters`` sweeps of 8-neighbour
    averaging. Pixels outside ``holes`` are never modified. ``sources``
    restricts which known pixels may feed the fill (default: all non-holes);
    hole regions unreachable from any source fall back to all non-holes.
    """
    out = np.array(frame, dtype=np.float64, copy=True)
    holes = np.asarray(holes, dtype=bool)
    if out.shape[:2] != holes.shape:
        raise ValueError("hole mask dimensions must match the frame")
    if not holes.any():
        return out
    if holes.all():
        raise ValueError("cannot inpaint a frame that is entirely hole")
    known = ~holes if sources is None else (np.asarray(sources, dtype=bool) & ~holes)
    if not known.any():
        known = ~holes
    remaining = holes.copy()
    for fallback in (False, True):
        if fallback:
            known = known | ~holes
        while remaining.any():
            sums, counts = _neighbour_sums(out, known)
            front = remaining & (counts > 0)
            if not front.any():
                break
            c = counts[front]
            out[front] = sums[front] / (c[:, None] if out.ndim == 3 else c)
            known = known | front
            remaining &= ~front
        if not remaining.any():
            break
    field_ok = known
    for _ in range(smooth_iters):
        sums, counts = _neighbour_sums(out, field_ok)
        upd = holes & (counts > 0)
        c = counts[upd]
        out[upd] = sums[upd] / (c[:, None] if out.ndim == 3 else c)
    return out
