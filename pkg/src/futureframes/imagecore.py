"""Raster, flow and mask primitives.

Frames are float64 arrays of shape (H, W, C) with values in [0, 1], flow
fields are float arrays of shape (H, W, 2) holding per-pixel (dx, dy) in
pixels, and masks are boolean (H, W) arrays. Pixel (x, y) lives at
``array[y, x]``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

FLO_MAGIC = 202021.25
FLO_TAG = b"PIEH"

# Tolerance on the sampling footprint test; keeps p + flow landing exactly on
# the last row/column valid despite rounding.
_BOUNDS_EPS = 1e-6

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class FloFormatError(ValueError):
    """Base class for malformed Middlebury .flo files."""


class FloMagicError(FloFormatError):
    pass


class FloTruncatedError(FloFormatError):
    pass


class FloDimensionError(FloFormatError):
    pass


# ---------------------------------------------------------------------------
# validation helpers


def as_frame(data) -> np.ndarray:
    """Return ``data`` as an (H, W, C) float64 frame, validating its range."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"frame must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("frame must have positive dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("frame values must lie in [0, 1]")
    return arr


def as_flow(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("flow contains non-finite vectors")
    return arr


def check_same_size(*arrays, what: str = "inputs") -> None:
    shapes = {tuple(a.shape[:2]) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch between {what}: {sorted(shapes)}")


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Return float (xs, ys) coordinate grids of shape (H, W)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


# ---------------------------------------------------------------------------
# sampling and warping


def sample_bilinear(image: np.ndarray, xs, ys) -> np.ndarray:
    """Bilinearly sample ``image`` at arrays of coordinates with edge clamping.

    ``image`` may be (H, W) or (H, W, C); the result has the shape of ``xs``
    followed by the channel axis when present.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("sampling coordinates must be finite")
    h, w = image.shape[:2]
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    if image.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
    top = image[y0, x0] * (1.0 - wx) + image[y0, x1] * wx
    bottom = image[y1, x0] * (1.0 - wx) + image[y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def bilinear_sample(frame: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample a single sub-pixel location; returns one value per channel."""
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"non-finite sampling coordinate ({x}, {y})")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    return sample_bilinear(frame, np.array(x), np.array(y))


def footprint_inside(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    return (
        (xs >= -_BOUNDS_EPS)
        & (xs <= width - 1 + _BOUNDS_EPS)
        & (ys >= -_BOUNDS_EPS)
        & (ys <= height - 1 + _BOUNDS_EPS)
    )


def backward_warp(source: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Warp ``source`` by sampling it at ``p + flow(p)`` for every pixel p.

    Returns the warped raster and a mask that is True where the bilinear
    footprint lay inside the source (no clamping happened).
    """
    source = np.asarray(source, dtype=np.float64)
    flow = as_flow(flow)
    check_same_size(source, flow, what="source and flow")
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    return sample_bilinear(source, sx, sy), footprint_inside(sx, sy, h, w)


def invert_flow(flow: np.ndarray, iterations: int = 30) -> np.ndarray:
    """Approximate the inverse of a smooth flow by fixed-point iteration.

    Solves g(q) = -f(q + g(q)) so that following ``flow`` then the result
    returns to the start. Exact affine flows converge to machine precision.
    """
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    inv = -flow.copy()
    for _ in range(iterations):
        inv = -sample_bilinear(flow, xs + inv[..., 0], ys + inv[..., 1])
    return inv


# ---------------------------------------------------------------------------
# derivatives and pyramids


def spatial_gradient(frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along x and y; zero on the last column / row."""
    frame = np.asarray(frame, dtype=np.float64)
    gx = np.zeros_like(frame)
    gy = np.zeros_like(frame)
    gx[:, :-1] = frame[:, 1:] - frame[:, :-1]
    gy[:-1, :] = frame[1:, :] - frame[:-1, :]
    return gx, gy


def binomial_blur(image: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(image, _BINOMIAL5, axis=0, mode="reflect")
    return ndimage.correlate1d(out, _BINOMIAL5, axis=1, mode="reflect")


def gaussian_pyramid(frame: np.ndarray, levels: int) -> list[np.ndarray]:
    """Build a pyramid by 5-tap binomial blur followed by 2x decimation."""
    frame = np.asarray(frame, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = frame.shape[:2]
    if min(h, w) / 2 ** (levels - 1) < 8:
        raise ValueError(
            f"{levels} pyramid levels need min(H, W) >= {8 * 2 ** (levels - 1)}, got {min(h, w)}"
        )
    out = [frame]
    for _ in range(levels - 1):
        out.append(binomial_blur(out[-1])[::2, ::2])
    return out


# ---------------------------------------------------------------------------
# masks


def disk(radius: int) -> np.ndarray:
    """Square structuring element of the given radius (3x3 for radius 1)."""
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def dilate(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk(radius))


def erode(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=disk(radius), border_value=0)


def open_close(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological opening then closing; the image edge is replicated."""
    if radius <= 0:
        return mask.copy()
    st = disk(radius)
    pad = 2 * radius
    padded = np.pad(mask, pad, mode="edge")
    padded = ndimage.binary_opening(padded, structure=st)
    padded = ndimage.binary_closing(padded, structure=st)
    return padded[pad:-pad, pad:-pad]


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labelling."""
    return ndimage.label(mask, structure=np.ones((3, 3), dtype=int))


# ---------------------------------------------------------------------------
# file formats


def write_flo(path, flow: np.ndarray) -> None:
    """Write a Middlebury .flo file (little-endian float32 payload)."""
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_TAG)
        fh.write(struct.pack("<ii", w, h))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Read a Middlebury .flo file into an (H, W, 2) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FloTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    (magic,) = struct.unpack("<f", raw[:4])
    if magic != FLO_MAGIC:
        raise FloMagicError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0:
        raise FloDimensionError(f"{path}: nonpositive dimensions {w}x{h}")
    need = 12 + w * h * 8
    if len(raw) < need:
        raise FloTruncatedError(f"{path}: payload has {len(raw) - 12} bytes, need {need - 12}")
    data = np.frombuffer(raw, dtype="<f4", count=w * h * 2, offset=12)
    return data.reshape(h, w, 2).astype(np.float32)


def read_frame(path) -> np.ndarray:
    """Read an 8-bit PNG or PPM into a float frame in [0, 1]."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def frame_to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)


def write_frame(path, frame: np.ndarray) -> None:
    """Write a frame as 8-bit PNG or binary PPM (chosen by file suffix)."""
    data = frame_to_uint8(frame)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        if data.ndim == 2:
            data = np.repeat(data[:, :, None], 3, axis=2)
        h, w = data.shape[:2]
        path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())
        return
    Image.fromarray(data).save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) >= 128
