"""Background prediction: extrapolate camera motion, emit batch backward flows, warp.

All future flows are produced in one batch from composed per-step motions,
so no predicted image is ever re-warped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affine as af
from .decompose import DegenerateMotionError, GlobalMotion
from .imagecore import backward_warp

MIN_EXTRAPOLATED_DET = 0.1


@dataclass
class MotionHistory:
    """Fitted camera motions for the observed steps (frame k -> k+1)."""

    motions: list
    model_order: str = "linear"

    def __post_init__(self):
        if not self.motions:
            raise ValueError("motion history is empty")
        if self.model_order not in ("constant", "linear"):
            raise ValueError(f"unknown model order {self.model_order!r}")

    @property
    def velocity(self) -> np.ndarray:
        """Average first difference of the six motion parameters."""
        if len(self.motions) < 2:
            return np.zeros(6)
        p = np.stack([m.params() for m in self.motions])
        return np.diff(p, axis=0).mean(axis=0)


def extrapolate_global(history: MotionHistory, horizon: int) -> list[GlobalMotion]:
    """Per-step motions for the next ``horizon`` steps.

    The constant model repeats the last motion. The linear model adds the
    average first difference per step; once a step's linear block would drop
    to determinant <= 0.1 the previous step's motion is held for the rest of
    the horizon.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    last = history.motions[-1].params()
    if history.model_order == "constant" or len(history.motions) < 2:
        return [GlobalMotion(last.reshape(2, 3)) for _ in range(horizon)]
    vel = history.velocity
    out = []
    prev = last
    held = False
    for k in range(1, horizon + 1):
        cand = last + k * vel
        # once clamped, stay clamped: a parameter walking through zero can
        # come back with a positive determinant but a flipped orientation
        held = held or af.det2(cand.reshape(2, 3)) <= MIN_EXTRAPOLATED_DET
        if held:
            cand = prev
        out.append(GlobalMotion(cand.reshape(2, 3)))
        prev = cand
    return out


def composite_motions(motions: list[GlobalMotion]) -> list[np.ndarray]:
    """3x3 maps from the last input frame to each future frame."""
    out = []
    acc = np.eye(3)
    for m in motions:
        acc = m.h @ acc
        out.append(acc.copy())
    return out


def future_backward_flows(motions: list[GlobalMotion], width: int, height: int) -> list[np.ndarray]:
    """Backward flows (future frame -> last input frame) for every horizon."""
    if not motions:
        raise ValueError("need at least one motion")
    flows = []
    for comp in composite_motions(motions):
        if abs(af.det2(comp)) <= 1e-6:
            raise DegenerateMotionError("composite motion is not invertible")
        flows.append(af.flow_from_affine(np.linalg.inv(comp), height, width))
    return flows


def future_forward_flows(motions: list[GlobalMotion], width: int, height: int) -> list[np.ndarray]:
    """Forward flows (last input frame -> future frame), the reverse of the above."""
    return [af.flow_from_affine(c, height, width) for c in composite_motions(motions)]


def predict_background(static_bg, flows, holes=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Warp the hole-filled last frame with each backward flow.

    Returns (frame, valid) per horizon. ``valid`` is False where sampling
    clamped at the border, and also where the footprint touched ``holes``
    (pixels whose content was synthesised rather than observed).
    """
    static_bg = np.asarray(static_bg, dtype=np.float64)
    out = []
    for flow in flows:
        if flow.shape[:2] != static_bg.shape[:2]:
            raise ValueError("flow and background dimensions differ")
        frame, valid = backward_warp(static_bg, flow)
        if holes is not None and np.any(holes):
            touched, _ = backward_warp(np.asarray(holes, dtype=np.float64), flow)
            valid = valid & (touched <= 1e-9)
        out.append((frame, valid))
    return out
