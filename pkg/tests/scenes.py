"""Constructed scenes shared by several test modules."""
import numpy as np

from futureframes import affine as af
from futureframes import compose as cp
from futureframes import synth


def bg_composite(img, hole=None):
    hole = np.zeros(img.shape[:2], bool) if hole is None else hole
    prov = np.where(hole, cp.HOLE, cp.BACKGROUND)
    out = img.copy()
    out[hole] = 0.0
    return cp.CompositeFrame(out, hole, prov)


def occlusion_scene(seed):
    """Panning background with a band-shaped occluder that slides across it.

    Frames carry holes where the occluder is; ground truth is the unoccluded
    background render.
    """
    spec = {"seed": seed, "width": 96, "height": 64, "frame_count": 6, "t": 3, "camera": {"fixed": {"tx": 1.3, "ty": -0.6, "rotation_deg": 0.2}}}
    scene, truth = synth.generate(spec)
    H, W = scene.height, scene.width
    comps = []
    r = np.random.default_rng(seed)
    x0 = int(r.integers(10, 30))
    for k, bg in enumerate(truth.backgrounds):
        hole = np.zeros((H, W), bool)
        hole[10:40, x0 + 7 * k : x0 + 7 * k + 14] = True
        comps.append(bg_composite(bg, hole))
    fwd = [af.flow_from_affine(B, H, W) for B in truth.camera_steps]
    bwd = [af.flow_from_affine(np.linalg.inv(B), H, W) for B in truth.camera_steps]
    return comps, fwd, bwd, truth.backgrounds
