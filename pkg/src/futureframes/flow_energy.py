"""Flow evaluation energies: data, perceptual, smoothness and consistency terms.

The perceptual term uses a fixed, parameter-free feature stack (a 3-level
Gaussian pyramid plus forward-difference gradients of every level) in place
of learned CNN features. Every term is a per-pixel mean so values do not
depend on resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .imagecore import (
    as_flow,
    backward_warp,
    check_same_size,
    gaussian_pyramid,
    invert_flow,
    pixel_grid,
    sample_bilinear,
    spatial_gradient,
)

PERCEPTUAL_LEVELS = 3


@dataclass(frozen=True)
class EnergyWeights:
    lambda_data: float = 1.0
    lambda_perc: float = 15.0
    lambda_smooth: float = 1.0
    lambda_cons: float = 1.0
    a: float = 3.0
    b: float = 0.05

    def __post_init__(self):
        for name in ("lambda_data", "lambda_perc", "lambda_smooth", "lambda_cons", "b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.a <= 0:
            raise ValueError("a must be > 0")

    def combine(self, data: float, perc: float, smooth: float, cons: float) -> float:
        return (
            self.lambda_data * data
            + self.lambda_perc * perc
            + self.lambda_smooth * smooth
            + self.lambda_cons * cons
        )


@dataclass
class FrameEnergy:
    frame: int
    data: float
    perc: float
    smooth: float
    cons: float
    total: float
    valid_frac: float


@dataclass
class EnergyReport:
    frames: list = field(default_factory=list)
    has_reference: bool = True

    @property
    def totals(self) -> dict:
        keys = ("data", "perc", "smooth", "cons", "total")
        out = {k: float(sum(getattr(f, k) for f in self.frames)) for k in keys}
        out["valid_frac"] = (
            float(np.mean([f.valid_frac for f in self.frames])) if self.frames else 1.0
        )
        return out

    @property
    def total(self) -> float:
        return self.totals["total"]

    def to_json(self) -> dict:
        return {
            "frames": [asdict(f) for f in self.frames],
            "totals": self.totals,
            "has_reference": self.has_reference,
        }


def data_term(pred_flow, ref_flow, confidence) -> float:
    """Mean L1 flow discrepancy over confident pixels (0 if none)."""
    pred_flow = as_flow(pred_flow)
    ref_flow = as_flow(ref_flow)
    confidence = np.asarray(confidence, dtype=bool)
    check_same_size(pred_flow, ref_flow, confidence, what="flows and confidence")
    if not confidence.any():
        return 0.0
    l1 = np.abs(pred_flow - ref_flow).sum(axis=-1)
    return float(l1[confidence].mean())


def perceptual_features(frame: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(level, gx, gy) for each level of a 3-level binomial pyramid."""
    feats = []
    for level in gaussian_pyramid(frame, PERCEPTUAL_LEVELS):
        gx, gy = spatial_gradient(level)
        feats.append((level, gx, gy))
    return feats


def perceptual_term(warped, target) -> float:
    warped = np.asarray(warped, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if warped.shape != target.shape:
        raise ValueError(f"dimension mismatch: {warped.shape} vs {target.shape}")
    total = 0.0
    for fw, ft in zip(perceptual_features(warped), perceptual_features(target)):
        n = fw[0].size
        total += sum(float(np.abs(a - b).sum()) for a, b in zip(fw, ft)) / n
    return total


def smoothness_map(flow, image) -> np.ndarray:
    """Per-pixel |grad f|_1 * exp(-|grad x|_1) on the interior (H-1, W-1) grid."""
    flow = as_flow(flow)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    check_same_size(flow, image, what="flow and image")
    fdx = flow[:-1, 1:] - flow[:-1, :-1]
    fdy = flow[1:, :-1] - flow[:-1, :-1]
    idx = image[:-1, 1:] - image[:-1, :-1]
    idy = image[1:, :-1] - image[:-1, :-1]
    grad_f = np.abs(fdx).sum(axis=-1) + np.abs(fdy).sum(axis=-1)
    grad_i = np.abs(idx).sum(axis=-1) + np.abs(idy).sum(axis=-1)
    return grad_f * np.exp(-grad_i)


def smoothness_term(flow, image) -> float:
    """Edge-aware flow smoothness, averaged over pixels with both forward differences."""
    m = smoothness_map(flow, image)
    if m.size == 0:
        return 0.0
    return float(m.mean())


def fb_consistency(forward, backward, a: float = 3.0, b: float = 0.05):
    """Forward-backward check of ``forward`` (i->t) against ``backward`` (t->i).

    Returns ``(residual, valid, energy)``: the residual p - (p' + b(p')) with
    p' = p + f(p), the validity mask of pixels whose residual norm is below
    max(a, b * |f(p)|), and the mean over all pixels of valid * |residual|_1.
    """
    forward = as_flow(forward)
    backward = as_flow(backward)
    check_same_size(forward, backward, what="forward and backward flows")
    h, w = forward.shape[:2]
    xs, ys = pixel_grid(h, w)
    px = xs + forward[..., 0]
    py = ys + forward[..., 1]
    back = sample_bilinear(backward, px, py)
    residual = np.stack([xs - (px + back[..., 0]), ys - (py + back[..., 1])], axis=-1)
    res_norm = np.hypot(residual[..., 0], residual[..., 1])
    fwd_norm = np.hypot(forward[..., 0], forward[..., 1])
    valid = res_norm < np.maximum(a, b * fwd_norm)
    energy = float((valid * np.abs(residual).sum(axis=-1)).mean())
    return residual, valid, energy


def total_energy(
    pred_flows,
    scene,
    weights: EnergyWeights | None = None,
    pred_flows_rev=None,
    targets=None,
) -> EnergyReport:
    """Evaluate predicted backward flows (future frame i -> last input t).

    Warped frames come from backward-warping the last input frame. Targets
    default to the scene's ground-truth future frames; reference flows and
    confidences come from ``scene.ref_flows`` / ``scene.confidences``. When
    the scene carries no reference flows the data term is 0 and the report is
    flagged ``has_reference=False``. Reverse (t -> i) flows default to a
    numerical inverse of each predicted flow.
    """
    weights = weights or EnergyWeights()
    pred_flows = [as_flow(f) for f in pred_flows]
    h = len(pred_flows)
    if targets is None:
        targets = scene.frames[scene.t : scene.t + h]
    if len(targets) != h:
        raise ValueError(f"{h} predicted flows but {len(targets)} target frames")
    if pred_flows_rev is None:
        pred_flows_rev = [invert_flow(f) for f in pred_flows]
    if len(pred_flows_rev) != h:
        raise ValueError("forward/backward predicted flow counts differ")
    has_ref = scene.ref_flows is not None
    if has_ref and len(scene.ref_flows) < h:
        raise ValueError(f"{h} predicted flows but {len(scene.ref_flows)} reference flows")
    source = scene.frames[scene.t - 1]
    report = EnergyReport(has_reference=has_ref)
    for k, (flow, rev, target) in enumerate(zip(pred_flows, pred_flows_rev, targets)):
        _, valid, cons = fb_consistency(flow, rev, weights.a, weights.b)
        if has_ref:
            conf = valid if scene.confidences is None else scene.confidences[k]
            data = data_term(flow, scene.ref_flows[k], conf)
        else:
            data = 0.0
        warped, _ = backward_warp(source, flow)
        perc = perceptual_term(warped, target)
        smooth = smoothness_term(flow, target)
        report.frames.append(
            FrameEnergy(
                frame=scene.t + k,
                data=data,
                perc=perc,
                smooth=smooth,
                cons=cons,
                total=weights.combine(data, perc, smooth, cons),
                valid_frac=float(valid.mean()),
            )
        )
    return report
