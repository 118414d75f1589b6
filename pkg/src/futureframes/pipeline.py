"""Separate, predict, composite: the full prediction flow as a library call."""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import affine as af
from . import background as bgm
from . import compose as cp
from .decompose import (
    TAU_MOVE,
    DegenerateMotionError,
    GlobalMotion,
    ObjectTrack,
    detect_moving,
    extract_tracks,
    fit_global_motion,
    inpaint_background,
    track_check,
    track_ssim_scores,
)
from .flow_energy import EnergyReport, EnergyWeights, total_energy
from .imagecore import dilate, pixel_grid
from .objects import AffineParams, TrajectoryObjective, extrapolate_trajectory, fit_past_affines, render_object
from .scene import SceneDataError, SceneSequence

THREADS_ENV = "FUTUREFRAMES_THREADS"
HOLE_RADIUS = 2


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    input_dir: str | None = None
    output_dir: str | None = None
    t: int = 4
    horizon: int = 5
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    objective: TrajectoryObjective = field(default_factory=TrajectoryObjective)
    model_order: str = "linear"
    tau_move: float = TAU_MOVE
    dump_intermediates: bool = False
    seed: int = 0
    threads: int = field(default_factory=default_threads)
    pass_length: int = 5

    def __post_init__(self):
        if self.t < 2:
            raise ValueError("t must be >= 2 (motion needs at least one input flow)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.pass_length < 1:
            raise ValueError("pass_length must be >= 1")
        if self.model_order not in ("constant", "linear"):
            raise ValueError(f"unknown model order {self.model_order!r}")
        if self.tau_move <= 0:
            raise ValueError("tau_move must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class TrackPrediction:
    track: ObjectTrack
    past: list  # AffineParams per input frame
    future: list  # AffineParams per predicted frame
    scores: list

    def to_json(self) -> dict:
        x0, y0, x1, y1 = self.track.bbox()
        return {
            "id": self.track.id,
            "bbox": [x0, y0, x1, y1],
            "area": self.track.area,
            "centroid": list(self.track.center),
            "depth_key": self.track.depth_key,
            "ssim_scores": [float(s) for s in self.scores],
            "past_affines": [a.to_json()["params"] for a in self.past],
            "future_affines": [a.to_json()["params"] for a in self.future],
        }


@dataclass
class PassResult:
    """One prediction pass over ``len(frames)`` future frames."""

    frames: list
    composites: list
    tracks: list
    global_motions: list  # fitted input steps
    future_motions: list  # extrapolated steps
    backgrounds: list  # (frame, valid) per horizon
    static_background: np.ndarray
    flows: list  # backward flows to this pass's last input frame
    step_flows: list  # forward flows between consecutive frames, starting at the last input
    energies: EnergyReport
    raw_composites: list = field(default_factory=list)


@dataclass
class PredictionResult:
    frames: list
    tracks: list
    flows: list
    energies: EnergyReport
    passes: list
    timings: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "frames": len(self.frames),
            "passes": [
                {
                    "frames": len(p.frames),
                    "tracks": [tp.to_json() for tp in p.tracks],
                    "global_motions": [m.params().tolist() for m in p.global_motions],
                    "future_motions": [m.params().tolist() for m in p.future_motions],
                    "energies": p.energies.to_json(),
                }
                for p in self.passes
            ],
            "tracks": [tp.to_json() for tp in self.tracks],
            "energies": self.energies.to_json(),
        }


@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + max(time.perf_counter() - start, 0.0)


def _trim(scene: SceneSequence, t: int) -> SceneSequence:
    if scene.t < t:
        raise SceneDataError(f"scene has {scene.t} input frames, config needs {t}")
    obs = scene.observed()
    if obs.t == t:
        return obs
    k = obs.t - t
    return SceneSequence(frames=obs.frames[k:], flows_fwd=obs.flows_fwd[k:], t=t, T=obs.T - k, fps=obs.fps, meta=dict(obs.meta))


def _snap(motion: GlobalMotion, tol: float = 1e-9) -> GlobalMotion:
    # Remove floating-point dust so that exactly static or integer-shift
    # cameras reproduce pixels exactly.
    p = motion.params()
    r = np.round(p)
    p = np.where(np.abs(p - r) < tol, r, p)
    return GlobalMotion(p.reshape(2, 3))


def _object_flow(M: np.ndarray, xs, ys):
    X, Y = af.apply(M, xs, ys)
    return np.stack([X - xs, Y - ys], axis=-1)


def _predict_pass(scene: SceneSequence, horizon: int, config: RunConfig, pool, timings: dict) -> PassResult:
    H, W = scene.height, scene.width
    frames = scene.inputs()
    flows = scene.input_flows()
    last = frames[-1]

    with _stage("detect_moving", timings):
        moving = detect_moving(scene, config.tau_move)
    with _stage("extract_tracks", timings):
        tracks = extract_tracks(scene, moving)
        scores = [track_ssim_scores(tr, frames) for tr in tracks]
        kept = [(tr, s) for tr, s in zip(tracks, scores) if track_check(tr, frames)]
    with _stage("inpaint_background", timings):
        hole = dilate(moving[-1], HOLE_RADIUS)
        static_bg = inpaint_background(last, hole) if hole.any() else last.copy()
    with _stage("predict_background", timings):
        motions = [_snap(fit_global_motion(f, exclude=dilate(m, HOLE_RADIUS))) for f, m in zip(flows, moving)]
        future = [_snap(m) for m in bgm.extrapolate_global(bgm.MotionHistory(motions, config.model_order), horizon)]
        bg_flows = bgm.future_backward_flows(future, W, H)
        backgrounds = bgm.predict_background(static_bg, bg_flows, hole)

    def object_stage(item):
        tr, sc = item
        try:
            past = fit_past_affines(tr, flows)
        except DegenerateMotionError:
            return None
        fut = extrapolate_trajectory(past, horizon, config.objective, frame_size=(H, W))
        return TrackPrediction(tr, past, fut, sc)

    with _stage("predict_objects", timings):
        preds = [p for p in pool.map(object_stage, kept) if p is not None]
        ordered_ids = [tr.id for tr in cp.depth_order([p.track for p in preds])]
        by_id = {p.track.id: p for p in preds}
        ordered = [by_id[i] for i in ordered_ids]

        def render(k):
            return [render_object(p.track, p.future[k]) for p in ordered]

        layers = list(pool.map(render, range(horizon)))

    with _stage("compose", timings):
        raw = list(pool.map(lambda k: cp.paste(backgrounds[k][0], backgrounds[k][1], layers[k], ordered_ids), range(horizon)))
        # observed frames join the sequence so background seen earlier can be propagated forward
        observed = []
        for k, f in enumerate(frames):
            prov = np.zeros((H, W), dtype=np.int32)
            for p in ordered:
                prov[p.track.masks[k]] = p.track.id
            prov[dilate(moving[k], HOLE_RADIUS) & (prov == 0)] = cp.HOLE
            img = f.copy()
            img[prov == cp.HOLE] = 0.0
            observed.append(cp.CompositeFrame(img, prov == cp.HOLE, prov))
        steps = motions + future
        fwd = [m.flow(H, W) for m in steps]
        bwd = [m.inverse().flow(H, W) for m in steps]
        filled = cp.video_inpaint(observed + raw, fwd, bwd, config.weights.a, config.weights.b)
        composites = list(pool.map(cp.final_fill, filled[len(frames):]))

    with _stage("energies", timings):
        xs, ys = pixel_grid(H, W)
        out_flows = []
        for k in range(horizon):
            fl = bg_flows[k].copy()
            prov = composites[k].provenance
            for p in ordered:
                sel = prov == p.track.id
                if sel.any():
                    Minv = np.linalg.inv(p.future[k].image_matrix())
                    fl[sel] = _object_flow(Minv, xs[sel], ys[sel])
            out_flows.append(fl)
        step_flows = []
        prev_prov = observed[-1].provenance
        prev_mats = {p.track.id: np.eye(3) for p in ordered}
        for k in range(horizon):
            fl = future[k].flow(H, W)
            mats = {p.track.id: p.future[k].image_matrix() for p in ordered}
            for oid, M in mats.items():
                sel = prev_prov == oid
                if sel.any():
                    fl[sel] = _object_flow(M @ np.linalg.inv(prev_mats[oid]), xs[sel], ys[sel])
            step_flows.append(fl)
            prev_prov, prev_mats = composites[k].provenance, mats
        out_frames = [c.image for c in composites]
        # no future information is available here, so the composites are the targets
        energies = total_energy(out_flows, scene, config.weights, targets=out_frames)

    return PassResult(
        frames=out_frames,
        composites=composites,
        tracks=ordered,
        global_motions=motions,
        future_motions=future,
        backgrounds=backgrounds,
        static_background=static_bg,
        flows=out_flows,
        step_flows=step_flows,
        energies=energies,
        raw_composites=raw,
    )


def predict(scene: SceneSequence, config: RunConfig | None = None) -> PredictionResult:
    """Predict ``config.horizon`` frames after the scene's input frames.

    Horizons longer than ``config.pass_length`` are produced recurrently: the
    most recent ``t`` frames (observed or predicted) seed the next pass, with
    flows between predicted frames taken from the predicted motions.
    """
    config = config or RunConfig()
    timings: dict = {}
    with _stage("load", timings):
        current = _trim(scene, config.t)
    all_frames = list(current.frames)
    all_flows = list(current.flows_fwd)
    passes = []
    remaining = config.horizon
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        while remaining > 0:
            h = min(remaining, config.pass_length)
            res = _predict_pass(current, h, config, pool, timings)
            passes.append(res)
            all_frames.extend(res.frames)
            all_flows.extend(res.step_flows)
            remaining -= h
            if remaining > 0:
                t = config.t
                current = SceneSequence(
                    frames=all_frames[-t:], flows_fwd=all_flows[-(t - 1):], t=t, T=t + remaining, fps=scene.fps
                )
    frames = [f for p in passes for f in p.frames]
    first = passes[0]
    return PredictionResult(
        frames=frames,
        tracks=first.tracks,
        flows=[fl for p in passes for fl in p.flows],
        energies=first.energies,
        passes=passes,
        timings=timings,
    )
