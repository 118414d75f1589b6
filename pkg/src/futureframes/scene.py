"""Scene container and scene-directory I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import as_flow, as_frame, read_flo, read_frame, read_mask


class SceneDataError(ValueError):
    """Raised when a scene directory or sequence is incomplete or inconsistent."""


@dataclass
class SceneSequence:
    """Frames, consecutive forward flows and clip metadata.

    ``frames`` holds at least the ``t`` input frames (0-based indices
    ``0..t-1``; frame ``t-1`` is the last observed one). When ground truth
    is known, frames ``t..T-1`` may follow, together with ``ref_flows``:
    backward flows from each future frame to the last input frame, and their
    ``confidences``. ``flows_fwd[k]`` maps frame k to frame k+1.
    """

    frames: list
    flows_fwd: list
    t: int
    T: int
    fps: float = 10.0
    gt_masks: list | None = None
    semantic: list | None = None
    instance: list | None = None
    ref_flows: list | None = None
    confidences: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = [as_frame(f) for f in self.frames]
        self.flows_fwd = [as_flow(f) for f in self.flows_fwd]
        if not self.frames:
            raise SceneDataError("scene has no frames")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise SceneDataError("all frames must share dimensions")
        if any(f.shape[:2] != shape[:2] for f in self.flows_fwd):
            raise SceneDataError("flow dimensions must match frames")
        if len(self.flows_fwd) > len(self.frames) - 1:
            raise SceneDataError("more flows than consecutive frame pairs")
        if not (1 <= self.t < self.T):
            raise SceneDataError(f"need 1 <= t < T, got t={self.t}, T={self.T}")
        if len(self.frames) < self.t:
            raise SceneDataError(f"scene holds {len(self.frames)} frames, t={self.t}")

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    @property
    def channels(self) -> int:
        return self.frames[0].shape[2]

    def inputs(self) -> list:
        return self.frames[: self.t]

    def input_flows(self) -> list:
        return self.flows_fwd[: self.t - 1]

    def future_frames(self) -> list:
        return self.frames[self.t : self.T]

    def observed(self) -> "SceneSequence":
        """Copy restricted to the input frames (no future information)."""
        return SceneSequence(
            frames=self.inputs(),
            flows_fwd=self.input_flows(),
            t=self.t,
            T=self.T,
            fps=self.fps,
            gt_masks=None if self.gt_masks is None else self.gt_masks[: self.t],
            meta=dict(self.meta),
        )


def frame_name(index: int, suffix: str = ".png") -> str:
    return f"{index:04d}{suffix}"


def load_scene(directory) -> SceneSequence:
    """Load the observed part of a scene directory.

    Reads ``scene.json`` (t, T, fps), ``frames/%04d.png`` and
    ``flow/%04d.flo``. Ground-truth futures live under ``truth/`` and are
    never read here.
    """
    root = Path(directory)
    manifest_path = root / "scene.json"
    if not manifest_path.is_file():
        raise SceneDataError(f"{root}: missing scene.json")
    try:
        manifest = json.loads(manifest_path.read_text())
        t = int(manifest["t"])
        T = int(manifest["T"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SceneDataError(f"{manifest_path}: malformed manifest ({exc})") from exc
    frames = []
    for k in range(t):
        p = root / "frames" / frame_name(k)
        if not p.is_file():
            raise SceneDataError(f"missing input frame {p}")
        frames.append(read_frame(p))
    flows = []
    for k in range(t - 1):
        p = root / "flow" / frame_name(k, ".flo")
        if not p.is_file():
            raise SceneDataError(f"missing input flow {p}")
        flows.append(read_flo(p).astype(np.float64))
    masks = None
    mask_root = root / "masks"
    if mask_root.is_dir():
        objs = sorted(d for d in mask_root.iterdir() if d.is_dir())
        if objs:
            masks = []
            for k in range(t):
                layers = [read_mask(d / frame_name(k)) for d in objs if (d / frame_name(k)).is_file()]
                masks.append(layers)
    return SceneSequence(
        frames=frames,
        flows_fwd=flows,
        t=t,
        T=T,
        fps=float(manifest.get("fps", 10.0)),
        gt_masks=masks,
        meta={"source": str(root)},
    )
