"""Synthetic layered scenes with exact flows, masks and affine ground truth.

A scene is a textured background seen through an affine camera plus rigid
rectangular sprites moving by per-step affine maps. Everything the
predictor has to recover (camera steps, sprite poses, flows, occlusions,
future frames) is known analytically.

Coordinates: ``G_k`` maps frame-k pixels to background-texture coordinates;
the camera step ``B`` maps a static world point's frame-k position to its
frame-(k+1) position, so ``G_{k+1} = G_k B^-1``. Sprite pose ``P_{j,k}``
maps sprite-local centred coordinates to frame-k pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import affine as af
from .imagecore import pixel_grid, sample_bilinear, write_flo, write_frame, write_mask
from .scene import SceneSequence, frame_name

TEXTURES = ("checker", "noise", "gradient")
MOTIONS = ("constant_step", "linear_pose")
BACKGROUND = -1


class SceneSpecError(ValueError):
    pass


def _pair(v, name) -> tuple[float, float]:
    if isinstance(v, (int, float)):
        return float(v), float(v)
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise SceneSpecError(f"{name} must be a number or [lo, hi]") from exc
    if lo > hi:
        raise SceneSpecError(f"{name}: lo > hi")
    return lo, hi


@dataclass
class CameraSpec:
    translation: tuple = (0.0, 0.0)
    rotation_deg: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)
    fixed: dict | None = None


@dataclass
class SpriteSpec:
    count: int = 0
    size: tuple = (16.0, 28.0)
    texture: str = "noise"
    texture_sigma: float = 5.0
    speed: tuple = (2.5, 4.0)
    rotation_deg: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)
    motion: str = "constant_step"
    keep_inside: bool = True
    overlap: str = "avoid"
    items: list = field(default_factory=list)


@dataclass
class SceneSpec:
    seed: int = 0
    width: int = 192
    height: int = 128
    frame_count: int = 9
    t: int = 4
    fps: float = 10.0
    background: str = "noise"
    background_sigma: float = 5.0
    camera: CameraSpec = field(default_factory=CameraSpec)
    sprites: SpriteSpec = field(default_factory=SpriteSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        if not isinstance(d, dict):
            raise SceneSpecError("scene spec must be a JSON object")
        known = {"seed", "width", "height", "frame_count", "t", "fps", "background",
                 "background_sigma", "camera", "sprites"}
        unknown = set(d) - known
        if unknown:
            raise SceneSpecError(f"unknown scene spec keys: {sorted(unknown)}")
        cam = d.get("camera", {}) or {}
        spr = d.get("sprites", {}) or {}
        try:
            camera = CameraSpec(
                translation=_pair(cam.get("translation", 0.0), "camera.translation"),
                rotation_deg=_pair(cam.get("rotation_deg", 0.0), "camera.rotation_deg"),
                scale=_pair(cam.get("scale", 1.0), "camera.scale"),
                fixed=cam.get("fixed"),
            )
            sprites = SpriteSpec(
                count=int(spr.get("count", len(spr.get("items", [])))),
                size=_pair(spr.get("size", [16, 28]), "sprites.size"),
                texture=str(spr.get("texture", "noise")),
                texture_sigma=float(spr.get("texture_sigma", 5.0)),
                speed=_pair(spr.get("speed", [2.5, 4.0]), "sprites.speed"),
                rotation_deg=_pair(spr.get("rotation_deg", 0.0), "sprites.rotation_deg"),
                scale=_pair(spr.get("scale", 1.0), "sprites.scale"),
                motion=str(spr.get("motion", "constant_step")),
                keep_inside=bool(spr.get("keep_inside", True)),
                overlap=str(spr.get("overlap", "avoid")),
                items=list(spr.get("items", [])),
            )
            spec = cls(
                seed=int(d.get("seed", 0)),
                width=int(d.get("width", 192)),
                height=int(d.get("height", 128)),
                frame_count=int(d.get("frame_count", 9)),
                t=int(d.get("t", 4)),
                fps=float(d.get("fps", 10.0)),
                background=str(d.get("background", "noise")),
                background_sigma=float(d.get("background_sigma", 5.0)),
                camera=camera,
                sprites=sprites,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SceneSpecError):
                raise
            raise SceneSpecError(str(exc)) from exc
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.width < 64 or self.height < 64:
            raise SceneSpecError("resolution must be at least 64x64")
        if not (1 <= self.t < self.frame_count):
            raise SceneSpecError("need 1 <= t < frame_count")
        if self.background not in TEXTURES:
            raise SceneSpecError(f"unknown background texture {self.background!r}")
        s = self.sprites
        if s.texture not in TEXTURES:
            raise SceneSpecError(f"unknown sprite texture {s.texture!r}")
        if s.motion not in MOTIONS:
            raise SceneSpecError(f"unknown sprite motion {s.motion!r}")
        if s.overlap not in ("avoid", "allow"):
            raise SceneSpecError("sprites.overlap must be 'avoid' or 'allow'")
        if s.count < len(s.items):
            raise SceneSpecError("sprites.count smaller than explicit items")
        if self.background_sigma <= 0 or s.texture_sigma <= 0:
            raise SceneSpecError("texture sigmas must be positive")
        if s.size[0] < 8:
            raise SceneSpecError("sprite sizes must be >= 8 px")
        for it in s.items:
            if min(float(it.get("w", 8)), float(it.get("h", 8))) < 8:
                raise SceneSpecError("sprite sizes must be >= 8 px")
        for lo, hi in (self.camera.scale, s.scale):
            if lo * lo < 0.8 or hi * hi > 1.25:
                raise SceneSpecError("per-step scale ranges must keep determinants in [0.8, 1.25]")
        fixed = self.camera.fixed or {}
        sc = float(fixed.get("scale", 1.0))
        if not 0.8 <= sc * sc <= 1.25:
            raise SceneSpecError("camera.fixed.scale must keep the determinant in [0.8, 1.25]")


@dataclass
class Sprite:
    width: float
    height: float
    texture: np.ndarray
    poses: list  # 3x3 per frame


@dataclass
class GroundTruth:
    """Everything the generator knows about a scene."""

    camera_poses: list  # G_k, 3x3
    camera_steps: list  # B_k, 3x3, frame k -> k+1
    sprites: list
    layers: list  # per frame (H, W) int layer id, -1 background
    visible_masks: list  # [frame][sprite] bool
    amodal_masks: list  # [frame][sprite] bool
    backgrounds: list  # background-only renders
    occluded: list  # per step k: frame-k pixels whose forward target is hidden
    disoccluded: list  # per step k: frame-(k+1) pixels without a source in frame k
    bg_flows_to_last: list  # per frame i: camera-only flow i -> t-1
    t: int
    T: int

    def sprite_step(self, j: int, k: int) -> np.ndarray:
        p = self.sprites[j].poses
        return p[k + 1] @ np.linalg.inv(p[k])

    def object_affine(self, j: int, i: int, center, ref: int | None = None) -> np.ndarray:
        """Sprite j's map from frame ``ref`` (default t-1) to frame i, in
        coordinates centred at ``center`` (2x3)."""
        ref = self.t - 1 if ref is None else ref
        p = self.sprites[j].poses
        cx, cy = center
        m = af.translation(-cx, -cy) @ p[i] @ np.linalg.inv(p[ref]) @ af.translation(cx, cy)
        return af.from_h(m)


def make_texture(kind: str, height: int, width: int, rng: np.random.Generator, sigma: float = 5.0):
    """Smooth RGB texture in [0.1, 0.9]."""
    if kind == "noise":
        tex = _normalize(_smooth_noise(rng, height, width, sigma)) + _normalize(_smooth_noise(rng, height, width, 4 * sigma))
    elif kind == "checker":
        cell = int(rng.integers(4, 7))
        ys, xs = np.mgrid[0:height, 0:width]
        board = ((xs // cell + ys // cell) % 2).astype(np.float64)
        c0, c1 = rng.random(3), rng.random(3)
        tex = board[..., None] * c1 + (1 - board[..., None]) * c0
        tex = ndimage.gaussian_filter(tex, (1.0, 1.0, 0))
    elif kind == "gradient":
        ang = rng.uniform(0, 2 * math.pi)
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        ramp = (math.cos(ang) * xs + math.sin(ang) * ys)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        c0, c1 = rng.random(3), rng.random(3)
        tex = ramp[..., None] * c1 + (1 - ramp[..., None]) * c0
        tex = tex + 0.3 * _normalize(ndimage.gaussian_filter(rng.random((height, width, 3)), (2, 2, 0)))
    else:
        raise SceneSpecError(f"unknown texture {kind!r}")
    return 0.1 + 0.8 * _normalize(tex)


def _smooth_noise(rng, height: int, width: int, sigma: float) -> np.ndarray:
    # Filter a larger canvas and crop, so the kernel never wraps around a
    # texture smaller than its support.
    pad = int(math.ceil(4 * sigma))
    big = rng.random((height + 2 * pad, width + 2 * pad, 3))
    big = ndimage.gaussian_filter(big, (sigma, sigma, 0), mode="reflect")
    return big[pad : pad + height, pad : pad + width]


def _normalize(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=(0, 1), keepdims=True)
    hi = x.max(axis=(0, 1), keepdims=True)
    return (x - lo) / np.maximum(hi - lo, 1e-9)


def _camera_step(spec: SceneSpec, rng) -> np.ndarray:
    cam = spec.camera
    center = ((spec.width - 1) / 2.0, (spec.height - 1) / 2.0)
    if cam.fixed is not None:
        tx = float(cam.fixed.get("tx", 0.0))
        ty = float(cam.fixed.get("ty", 0.0))
        rot = math.radians(float(cam.fixed.get("rotation_deg", 0.0)))
        sc = float(cam.fixed.get("scale", 1.0))
    else:
        tx = rng.uniform(*cam.translation)
        ty = rng.uniform(*cam.translation)
        rot = math.radians(rng.uniform(*cam.rotation_deg))
        sc = rng.uniform(*cam.scale)
    return af.translation(tx, ty) @ af.rotation_scale(rot, sc, center)


def _sprite_poses(c0, motion, step_lin, velocity, n, world_step=None):
    poses = []
    lin0 = np.eye(2)
    for k in range(n):
        if world_step is not None:
            pose = np.eye(3)
            pose[:2, 2] = c0
            for _ in range(k):
                pose = world_step @ pose
            poses.append(pose)
            continue
        if motion == "constant_step":
            lin = np.linalg.matrix_power(step_lin, k) @ lin0
        else:
            lin = (np.eye(2) + k * (step_lin - np.eye(2))) @ lin0
        pose = np.eye(3)
        pose[:2, :2] = lin
        pose[:2, 2] = np.asarray(c0) + k * np.asarray(velocity)
        poses.append(pose)
    return poses


def _corners(w, h):
    return np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])


def _inside_all(poses, w, h, width, height, margin=2.0) -> bool:
    for pose in poses:
        xs, ys = af.apply(pose, _corners(w, h)[:, 0], _corners(w, h)[:, 1])
        if xs.min() < margin or ys.min() < margin or xs.max() > width - 1 - margin or ys.max() > height - 1 - margin:
            return False
    return True


def _overlaps(a, b) -> bool:
    (pa, ra), (pb, rb) = a, b
    for Pa, Pb in zip(pa, pb):
        if np.hypot(*(Pa[:2, 2] - Pb[:2, 2])) < ra + rb + 3.0:
            return True
    return False


def _build_sprites(spec: SceneSpec, rng, cam_step) -> list:
    s = spec.sprites
    n = spec.frame_count
    sprites = []
    placed = []
    for idx in range(s.count):
        item = s.items[idx] if idx < len(s.items) else None
        if item is not None:
            w = float(item.get("w", 20))
            h = float(item.get("h", 20))
            tex_kind = item.get("texture", s.texture)
            texture = make_texture(tex_kind, int(math.ceil(h)) + 2, int(math.ceil(w)) + 2, rng, sigma=s.texture_sigma)
            rot = math.radians(float(item.get("rotation_deg", 0.0)))
            sc = float(item.get("scale", 1.0))
            step_lin = af.rotation_scale(rot, sc)[:2, :2]
            vel = (float(item.get("vx", 0.0)), float(item.get("vy", 0.0)))
            c0 = (float(item["x"]), float(item["y"]))
            world = cam_step if item.get("world_static", False) else None
            poses = _sprite_poses(c0, item.get("motion", s.motion), step_lin, vel, n, world)
            sprites.append(Sprite(w, h, texture, poses))
            continue
        for _attempt in range(4000):
            w = float(rng.integers(int(s.size[0]), int(s.size[1]) + 1))
            h = float(rng.integers(int(s.size[0]), int(s.size[1]) + 1))
            speed = rng.uniform(*s.speed)
            ang = rng.uniform(0, 2 * math.pi)
            vel = (speed * math.cos(ang), speed * math.sin(ang))
            rot = math.radians(rng.uniform(*s.rotation_deg))
            sc = rng.uniform(*s.scale)
            step_lin = af.rotation_scale(rot, sc)[:2, :2]
            c0 = (rng.uniform(0, spec.width - 1), rng.uniform(0, spec.height - 1))
            poses = _sprite_poses(c0, s.motion, step_lin, vel, n)
            if s.keep_inside and not _inside_all(poses, w, h, spec.width, spec.height):
                continue
            radius = 0.5 * math.hypot(w, h) * max(1.0, s.scale[1]) ** n
            if s.overlap == "avoid" and any(_overlaps((poses, radius), o) for o in placed):
                continue
            placed.append((poses, radius))
            break
        else:
            raise SceneSpecError("could not place sprites; relax size/speed/overlap settings")
        # one texel of margin so lookups inside the sprite never clamp
        texture = make_texture(s.texture, int(h) + 2, int(w) + 2, rng, sigma=s.texture_sigma)
        sprites.append(Sprite(w, h, texture, poses))
    return sprites


def _layer_at(sprites, k, xs, ys):
    """Front-most layer id at arbitrary positions of frame k (-1 = background)."""
    layer = np.full(xs.shape, BACKGROUND, dtype=np.int64)
    for j, sp in enumerate(sprites):  # later sprites are nearer
        u, v = af.apply(np.linalg.inv(sp.poses[k]), xs, ys)
        inside = (np.abs(u) <= sp.width / 2) & (np.abs(v) <= sp.height / 2)
        layer[inside] = j
    return layer


def _amodal(sp, k, xs, ys):
    u, v = af.apply(np.linalg.inv(sp.poses[k]), xs, ys)
    return (np.abs(u) <= sp.width / 2) & (np.abs(v) <= sp.height / 2), u, v


def _layer_motion(sprites, cam_steps, layer, k, xs, ys):
    """Positions in frame k+1 of frame-k points according to their layer."""
    X, Y = af.apply(cam_steps[k], xs, ys)
    for j in range(len(sprites)):
        sel = layer == j
        if sel.any():
            D = sprites[j].poses[k + 1] @ np.linalg.inv(sprites[j].poses[k])
            X[sel], Y[sel] = af.apply(D, xs[sel], ys[sel])
    return X, Y


def generate(spec: SceneSpec | dict) -> tuple[SceneSequence, GroundTruth]:
    """Render a scene; deterministic in ``spec.seed``."""
    if isinstance(spec, dict):
        spec = SceneSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    H, W, n = spec.height, spec.width, spec.frame_count

    cam_step = _camera_step(spec, rng)
    if not 0.8 <= af.det2(cam_step) <= 1.25:
        raise SceneSpecError("camera step determinant outside [0.8, 1.25]")
    max_shift = np.abs(cam_step[:2, 2]).max() + 0.05 * max(H, W) * abs(af.det2(cam_step) - 1)
    margin = int(24 + math.ceil(max_shift * n * 1.5))
    bg_tex = make_texture(spec.background, H + 2 * margin, W + 2 * margin, rng, spec.background_sigma)
    sprites = _build_sprites(spec, rng, cam_step)

    cam_steps = [cam_step.copy() for _ in range(n - 1)]
    poses = [af.translation(margin, margin)]
    for k in range(n - 1):
        poses.append(poses[-1] @ np.linalg.inv(cam_steps[k]))

    xs, ys = pixel_grid(H, W)
    frames, layers, backgrounds, visible, amodal = [], [], [], [], []
    for k in range(n):
        tx, ty = af.apply(poses[k], xs, ys)
        bg = sample_bilinear(bg_tex, tx, ty)
        img = bg.copy()
        layer = np.full((H, W), BACKGROUND, dtype=np.int64)
        am_k = []
        for j, sp in enumerate(sprites):
            inside, u, v = _amodal(sp, k, xs, ys)
            am_k.append(inside)
            if inside.any():
                tu = u[inside] + (sp.texture.shape[1] - 1) / 2.0
                tv = v[inside] + (sp.texture.shape[0] - 1) / 2.0
                img[inside] = sample_bilinear(sp.texture, tu, tv)
                layer[inside] = j
        frames.append(img)
        backgrounds.append(bg)
        layers.append(layer)
        amodal.append(am_k)
        visible.append([layer == j for j in range(len(sprites))])

    flows, occluded, disoccluded = [], [], []
    for k in range(n - 1):
        X, Y = _layer_motion(sprites, cam_steps, layers[k], k, xs, ys)
        flows.append(np.stack([X - xs, Y - ys], axis=-1))
        inb = (X >= 0) & (X <= W - 1) & (Y >= 0) & (Y <= H - 1)
        occluded.append(~inb | (_layer_at(sprites, k + 1, X, Y) != layers[k]))
        # sources of frame k+1 pixels, by their own layer
        lay = layers[k + 1]
        SX, SY = af.apply(np.linalg.inv(cam_steps[k]), xs, ys)
        for j in range(len(sprites)):
            sel = lay == j
            if sel.any():
                Dinv = sprites[j].poses[k] @ np.linalg.inv(sprites[j].poses[k + 1])
                SX[sel], SY[sel] = af.apply(Dinv, xs[sel], ys[sel])
        sinb = (SX >= 0) & (SX <= W - 1) & (SY >= 0) & (SY <= H - 1)
        disoccluded.append(~sinb | (_layer_at(sprites, k, SX, SY) != lay))

    last = spec.t - 1
    bg_to_last, ref_flows, confidences = [], [], []
    for i in range(n):
        M = np.linalg.inv(poses[last]) @ poses[i]
        X, Y = af.apply(M, xs, ys)
        bg_to_last.append(np.stack([X - xs, Y - ys], axis=-1))
        if i < spec.t:
            continue
        for j, sp in enumerate(sprites):
            sel = layers[i] == j
            if sel.any():
                Mj = sp.poses[last] @ np.linalg.inv(sp.poses[i])
                X[sel], Y[sel] = af.apply(Mj, xs[sel], ys[sel])
        ref_flows.append(np.stack([X - xs, Y - ys], axis=-1))
        inb = (X >= 0) & (X <= W - 1) & (Y >= 0) & (Y <= H - 1)
        confidences.append(inb & (_layer_at(sprites, last, X, Y) == layers[i]))

    truth = GroundTruth(
        camera_poses=poses,
        camera_steps=cam_steps,
        sprites=sprites,
        layers=layers,
        visible_masks=visible,
        amodal_masks=amodal,
        backgrounds=backgrounds,
        occluded=occluded,
        disoccluded=disoccluded,
        bg_flows_to_last=bg_to_last,
        t=spec.t,
        T=n,
    )
    scene = SceneSequence(
        frames=frames,
        flows_fwd=flows,
        t=spec.t,
        T=n,
        fps=spec.fps,
        gt_masks=visible,
        ref_flows=ref_flows,
        confidences=confidences,
        meta={"seed": spec.seed},
    )
    return scene, truth


def perturb_flows(flows, sigma: float, seed: int = 0) -> list:
    """Add seeded i.i.d. Gaussian noise (std ``sigma`` px) to every component."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return [np.array(f, dtype=np.float64, copy=True) for f in flows]
    rng = np.random.default_rng(seed)
    return [np.asarray(f, dtype=np.float64) + rng.normal(0.0, sigma, size=np.shape(f)) for f in flows]


def _mat_list(m) -> list:
    return [[float(v) for v in row] for row in af.from_h(m)]


def save_scene(scene: SceneSequence, truth: GroundTruth, directory, spec: SceneSpec | None = None) -> Path:
    """Write the scene directory layout.

    Inputs go to ``frames/``, ``flow/`` and ``masks/``; future frames, flows
    and masks go to ``truth/`` so prediction never sees them. ``scene.json``
    holds clip metadata, ``gt.json`` the analytic ground truth.
    """
    root = Path(directory)
    t = scene.t
    for sub in ("frames", "flow", "masks", "truth", "truth/flow", "truth/masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(scene.frames):
        target = root / "frames" if k < t else root / "truth"
        write_frame(target / frame_name(k), frame)
    for k, flow in enumerate(scene.flows_fwd):
        target = root / "flow" if k < t - 1 else root / "truth" / "flow"
        write_flo(target / frame_name(k, ".flo"), flow)
    for k, masks in enumerate(truth.visible_masks):
        base = root / "masks" if k < t else root / "truth" / "masks"
        for j, m in enumerate(masks):
            d = base / f"obj{j:02d}"
            d.mkdir(parents=True, exist_ok=True)
            write_mask(d / frame_name(k), m)
    meta = {
        "t": t,
        "T": scene.T,
        "fps": scene.fps,
        "width": scene.width,
        "height": scene.height,
        "frame_count": len(scene.frames),
    }
    (root / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    gt = {
        "t": t,
        "T": scene.T,
        "seed": None if spec is None else spec.seed,
        "camera": {"steps": [_mat_list(b) for b in truth.camera_steps]},
        "sprites": [
            {
                "id": j,
                "width": sp.width,
                "height": sp.height,
                "poses": [_mat_list(p) for p in sp.poses],
                "steps": [_mat_list(truth.sprite_step(j, k)) for k in range(len(sp.poses) - 1)],
            }
            for j, sp in enumerate(truth.sprites)
        ],
    }
    (root / "gt.json").write_text(json.dumps(gt, indent=2, sort_keys=True) + "\n")
    return root


def benchmark_spec(seed: int, sprites: int = 2) -> SceneSpec:
    """The end-to-end benchmark configuration: 128x192, t=4, horizon 5."""
    return SceneSpec.from_dict(
        {
            "seed": seed,
            "width": 192,
            "height": 128,
            "frame_count": 9,
            "t": 4,
            "background": "noise",
            "background_sigma": 5.0,
            "camera": {"translation": [-1.0, 1.0], "rotation_deg": [-0.3, 0.3], "scale": [0.995, 1.01]},
            "sprites": {
                "count": sprites,
                "size": [16, 26],
                "texture": "noise",
                "texture_sigma": 5.0,
                "speed": [2.5, 4.0],
                "rotation_deg": [-1.0, 1.0],
                "scale": [1.0, 1.0],
                "motion": "constant_step",
                "keep_inside": True,
                "overlap": "avoid",
            },
        }
    )
