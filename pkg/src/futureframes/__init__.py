"""Future video frame prediction by separating background and moving objects.

The background is warped by an extrapolated camera motion, each rigid object
follows its own regularised affine trajectory, and the two are composited
with flow-guided hole filling.
"""
from .compose import CompositeFrame, depth_order, final_fill, paste, video_inpaint
from .metrics import EvalReport, evaluate, ms_ssim, psnr, ssim
from .pipeline import PipelineError, PredictionResult, RunConfig, predict
from .scene import SceneDataError, SceneSequence, load_scene

__version__ = "0.1.0"

__all__ = [
    "CompositeFrame",
    "EvalReport",
    "PipelineError",
    "PredictionResult",
    "RunConfig",
    "SceneDataError",
    "SceneSequence",
    "depth_order",
    "evaluate",
    "final_fill",
    "load_scene",
    "ms_ssim",
    "paste",
    "predict",
    "psnr",
    "ssim",
    "video_inpaint",
]
