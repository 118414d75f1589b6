"""Per-object affine trajectories: fitting, regularised extrapolation, rendering.

Affine parameters act on coordinates centred at the object's centroid in
the last input frame, so the identity means "where it was last seen" and
the translation entries are the centroid displacement. Inside the
regularisers the translations are divided by the object's bounding-box
diagonal so that they are commensurate with the linear entries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affine as af
from .decompose import DegenerateMotionError, ObjectTrack, fit_global_motion
from .imagecore import erode, sample_bilinear

IDENTITY6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
_TRANS = np.array([2, 5])
MIN_DET = 0.1


@dataclass(frozen=True)
class AffineParams:
    """(a11, a12, tx, a21, a22, ty) about ``center``; ``diagonal`` is the
    translation unit used by the regularisers."""

    params: np.ndarray
    center: tuple = (0.0, 0.0)
    diagonal: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(p)):
            raise DegenerateMotionError("affine parameters must be finite")
        if abs(p[0] * p[4] - p[1] * p[3]) <= 1e-6:
            raise DegenerateMotionError("affine linear block is singular")
        if self.diagonal <= 0:
            raise ValueError("diagonal must be positive")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @classmethod
    def identity(cls, center=(0.0, 0.0), diagonal: float = 1.0) -> "AffineParams":
        return cls(IDENTITY6.copy(), center, diagonal)

    @classmethod
    def from_normalized(cls, v, center, diagonal) -> "AffineParams":
        p = np.array(v, dtype=np.float64)
        p[_TRANS] *= diagonal
        return cls(p, center, diagonal)

    @property
    def matrix(self) -> np.ndarray:
        return self.params.reshape(2, 3)

    @property
    def det(self) -> float:
        return af.det2(self.matrix)

    def normalized(self) -> np.ndarray:
        v = self.params.copy()
        v[_TRANS] /= self.diagonal
        return v

    def image_matrix(self) -> np.ndarray:
        """3x3 map between frame pixel coordinates (last frame -> this frame)."""
        cx, cy = self.center
        return af.translation(cx, cy) @ af.to_h(self.matrix) @ af.translation(-cx, -cy)

    @property
    def centroid(self) -> tuple:
        return self.center[0] + self.params[2], self.center[1] + self.params[5]

    def to_json(self) -> dict:
        return {"params": [float(v) for v in self.params], "center": list(self.center)}


@dataclass(frozen=True)
class TrajectoryObjective:
    """Weights of the trajectory objective.

    ``lambda_rgb`` only enters when ground-truth appearances are available
    (evaluation); ``lambda_fit`` anchors the solution to the constant-velocity
    extrapolation.
    """

    lambda_rgb: float = 1.0
    lambda_reg: float = 1.0
    lambda_smooth: float = 2.0
    lambda_fit: float = 1.0e5
    iterations: int = 200
    step: float = 1e-2
    huber_delta: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_rgb", "lambda_reg", "lambda_smooth", "lambda_fit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class ObjectLayer:
    """Rendered object: RGB values and mask on a box placed at ``origin``."""

    image: np.ndarray
    mask: np.ndarray
    origin: tuple


# ---------------------------------------------------------------------------
# fitting


def _fit_step(flow, mask) -> np.ndarray:
    """3x3 affine for one step, fitted on (eroded when possible) mask pixels."""
    core = erode(mask, 1)
    use = core if core.sum() >= 6 else mask
    if use.sum() >= 6:
        return fit_global_motion(flow, exclude=~use, inlier_px=1.0).h
    ys, xs = np.nonzero(use)
    src = np.column_stack([xs, ys]).astype(np.float64)
    dst = src + np.asarray(flow)[ys, xs]
    try:
        return af.to_h(af.fit_affine(src, dst))
    except np.linalg.LinAlgError as exc:
        raise DegenerateMotionError(str(exc)) from exc


def fit_past_affines(track: ObjectTrack, flows: list) -> list[AffineParams]:
    """Affines mapping the last frame's object geometry into each input frame.

    Per-step affines are fitted to the object's flow vectors inside its mask
    and composed backwards from the last frame, so entry k maps last-frame
    coordinates to frame-k coordinates. The last entry is the identity.
    """
    n = len(track.masks)
    if n < 2:
        raise ValueError("track needs masks in at least two frames")
    if len(flows) < n - 1:
        raise ValueError(f"need {n - 1} flows, got {len(flows)}")
    for k, m in enumerate(track.masks):
        if m.sum() < 3:
            raise DegenerateMotionError(f"track {track.id}: frame {k} mask has < 3 pixels")
    center = track.center
    diag = track.diagonal
    cx, cy = center
    to_c = af.translation(-cx, -cy)
    from_c = af.translation(cx, cy)
    out = [None] * n
    acc = np.eye(3)
    out[n - 1] = AffineParams.identity(center, diag)
    for k in range(n - 2, -1, -1):
        step = _fit_step(flows[k], track.masks[k])
        acc = np.linalg.inv(step) @ acc
        out[k] = AffineParams(af.from_h(to_c @ acc @ from_c).reshape(6), center, diag)
    return out


# ---------------------------------------------------------------------------
# regularisers


def reg_term(affines: list[AffineParams]) -> float:
    """Sum of Euclidean distances from the identity (normalised parameters)."""
    return float(sum(np.linalg.norm(a.normalized() - IDENTITY6) for a in affines))


def smooth_term(affines: list[AffineParams]) -> float:
    """Sum of L1 norms of second differences of the normalised parameters."""
    if len(affines) < 3:
        raise ValueError("smooth_term needs at least 3 affines (anchor plus two)")
    v = np.stack([a.normalized() for a in affines])
    return float(np.abs(np.diff(v, n=2, axis=0)).sum())


def rgb_term(track: ObjectTrack, affines: list[AffineParams], targets: list, target_masks=None) -> float:
    """Sum over frames of the mean absolute appearance error inside the object.

    Each affine renders the last-frame appearance; the error is averaged over
    rendered-mask pixels (intersected with ``target_masks`` when given) and
    channels.
    """
    if targets is None or len(targets) < len(affines):
        raise ValueError("rgb_term needs one target frame per affine")
    total = 0.0
    for i, a in enumerate(affines):
        layer = render_object(track, a)
        full_img, full_mask = place_layer(layer, targets[i].shape)
        m = full_mask if target_masks is None else full_mask & target_masks[i]
        if not m.any():
            continue
        total += float(np.abs(full_img[m] - np.asarray(targets[i])[m]).mean())
    return total


# ---------------------------------------------------------------------------
# extrapolation


def _huber(x, d):
    ax = np.abs(x)
    return np.where(ax <= d, 0.5 * x * x / d, ax - 0.5 * d)


def _huber_grad(x, d):
    return np.clip(x / d, -1.0, 1.0)


class _Objective:
    """Smoothed trajectory energy over normalised future parameters (h, 6)."""

    def __init__(self, anchor_last, anchors, obj: TrajectoryObjective):
        self.v0 = anchor_last
        self.anchors = anchors
        self.o = obj

    def _seq(self, X):
        return np.vstack([self.v0[None, :], X])

    def value(self, X) -> float:
        o = self.o
        d = o.huber_delta
        fit = float(((X - self.anchors) ** 2).sum())
        z = X - IDENTITY6
        reg = float((np.sqrt((z * z).sum(axis=1) + d * d) - d).sum())
        smooth = float(_huber(np.diff(self._seq(X), n=2, axis=0), d).sum()) if len(X) >= 2 else 0.0
        return o.lambda_fit * fit + o.lambda_reg * reg + o.lambda_smooth * smooth

    def grad(self, X) -> np.ndarray:
        o = self.o
        d = o.huber_delta
        g = 2.0 * o.lambda_fit * (X - self.anchors)
        z = X - IDENTITY6
        g += o.lambda_reg * z / np.sqrt((z * z).sum(axis=1) + d * d)[:, None]
        if len(X) >= 2:
            seq = self._seq(X)
            s = _huber_grad(np.diff(seq, n=2, axis=0), d)  # rows i -> seq[i], seq[i+1], seq[i+2]
            gs = np.zeros_like(seq)
            gs[:-2] += s
            gs[1:-1] -= 2.0 * s
            gs[2:] += s
            g += o.lambda_smooth * gs[1:]
        return g


def _project(X, lo, hi, prev=None):
    Y = X.copy()
    Y[:, _TRANS] = np.clip(Y[:, _TRANS], lo, hi)
    det = Y[:, 0] * Y[:, 4] - Y[:, 1] * Y[:, 3]
    low = det < MIN_DET
    if low.any():
        pos = low & (det > 0)
        if pos.any():
            f = np.sqrt(MIN_DET / det[pos])
            Y[np.ix_(pos, [0, 1, 3, 4])] *= f[:, None]
        neg = low & ~pos
        if neg.any():
            base = IDENTITY6 if prev is None else prev
            src = np.broadcast_to(base, Y.shape) if base.ndim == 1 else base
            Y[np.ix_(neg, [0, 1, 3, 4])] = src[np.ix_(neg, [0, 1, 3, 4])]
    return Y


def constant_velocity_anchors(past: list[AffineParams], horizon: int) -> np.ndarray:
    """Normalised parameters continued at the average past per-step change."""
    v = np.stack([a.normalized() for a in past])
    vel = np.diff(v, axis=0).mean(axis=0)
    return v[-1] + np.arange(1, horizon + 1)[:, None] * vel


def optimize_trajectory(
    past: list[AffineParams],
    horizon: int,
    objective: TrajectoryObjective | None = None,
    frame_size=None,
):
    """Run the projected descent; returns (normalised params, energy per iteration)."""
    objective = objective or TrajectoryObjective()
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(past) < 2:
        raise ValueError("need at least two past affines")
    ref = past[-1]
    cx, cy = ref.center
    d = ref.diagonal
    if frame_size is not None:
        H, W = frame_size
        lo = np.array([-cx, -cy]) / d
        hi = np.array([W - 1 - cx, H - 1 - cy]) / d
    else:
        lo = np.full(2, -np.inf)
        hi = np.full(2, np.inf)
    anchors = constant_velocity_anchors(past, horizon)
    f = _Objective(ref.normalized(), anchors, objective)
    X = _project(anchors, lo, hi)
    energies = [f.value(X)]
    step = objective.step
    for _ in range(objective.iterations):
        g = f.grad(X)
        # restart from twice the last accepted step, never above the initial one
        step = min(2.0 * step, objective.step)
        e0 = energies[-1]
        for _halving in range(60):
            cand = _project(X - step * g, lo, hi, prev=X)
            e1 = f.value(cand)
            if e1 <= e0:
                break
            step *= 0.5
        else:
            cand, e1 = X, e0
            step = objective.step
        X = cand
        energies.append(e1)
    return X, energies


def extrapolate_trajectory(
    past: list[AffineParams],
    horizon: int,
    objective: TrajectoryObjective | None = None,
    background=None,
    frame_size=None,
) -> list[AffineParams]:
    """Future affines: constant-velocity anchors refined by the regularised objective.

    ``background`` (future background frames) only supplies the frame bounds
    that keep the object's centroid inside the image.
    """
    if frame_size is None and background:
        frame_size = np.asarray(background[0]).shape[:2]
    X, _ = optimize_trajectory(past, horizon, objective, frame_size)
    ref = past[-1]
    return [AffineParams.from_normalized(x, ref.center, ref.diagonal) for x in X]


# ---------------------------------------------------------------------------
# rendering


def render_object(track: ObjectTrack, affine: AffineParams) -> ObjectLayer:
    """Warp the last-frame appearance and mask by ``affine`` (inverse sampling).

    Colours are sampled mask-weighted so background never bleeds into the
    object; the mask is binarised at 0.5 occupancy.
    """
    M = affine.image_matrix()
    if abs(af.det2(M)) <= 1e-6:
        raise DegenerateMotionError("cannot render through a singular affine")
    Minv = np.linalg.inv(M)
    img = np.pad(track.appearance * track.appearance_mask[..., None], ((1, 1), (1, 1), (0, 0)))
    msk = np.pad(track.appearance_mask.astype(np.float64), 1)
    ox, oy = track.origin[0] - 1, track.origin[1] - 1
    ch, cw = msk.shape
    corners = np.array([[ox, oy], [ox + cw - 1, oy], [ox, oy + ch - 1], [ox + cw - 1, oy + ch - 1]], dtype=float)
    X, Y = af.apply(M, corners[:, 0], corners[:, 1])
    H, W = track.frame_shape[:2]
    x0 = max(int(np.floor(X.min())), 0)
    y0 = max(int(np.floor(Y.min())), 0)
    x1 = min(int(np.ceil(X.max())), W - 1)
    y1 = min(int(np.ceil(Y.max())), H - 1)
    C = track.appearance.shape[2]
    if x1 < x0 or y1 < y0:
        return ObjectLayer(np.zeros((0, 0, C)), np.zeros((0, 0), dtype=bool), (0, 0))
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    sx, sy = af.apply(Minv, xs, ys)
    lx, ly = sx - ox, sy - oy
    outside = (lx < 0) | (lx > cw - 1) | (ly < 0) | (ly > ch - 1)
    occ = sample_bilinear(msk, lx, ly)
    occ[outside] = 0.0
    val = sample_bilinear(img, lx, ly)
    mask = occ >= 0.5
    out = np.zeros_like(val)
    out[mask] = val[mask] / occ[mask][:, None]
    return ObjectLayer(np.clip(out, 0.0, 1.0), mask, (x0, y0))


def place_layer(layer: ObjectLayer, shape) -> tuple[np.ndarray, np.ndarray]:
    """Expand a layer to full-frame (image, mask) rasters, clipping at the border."""
    H, W = shape[:2]
    C = shape[2] if len(shape) > 2 else layer.image.shape[2]
    img = np.zeros((H, W, C))
    mask = np.zeros((H, W), dtype=bool)
    if layer.mask.size == 0:
        return img, mask
    x0, y0 = layer.origin
    h, w = layer.mask.shape
    xa, ya = max(x0, 0), max(y0, 0)
    xb, yb = min(x0 + w, W), min(y0 + h, H)
    if xb <= xa or yb <= ya:
        return img, mask
    sub_m = layer.mask[ya - y0 : yb - y0, xa - x0 : xb - x0]
    sub_i = layer.image[ya - y0 : yb - y0, xa - x0 : xb - x0]
    mask[ya:yb, xa:xb] = sub_m
    img[ya:yb, xa:xb][sub_m] = sub_i[sub_m]
    return img, mask
