"""Small helpers for 2x3 affine maps in homogeneous form."""
from __future__ import annotations

import numpy as np


def to_h(m: np.ndarray) -> np.ndarray:
    """2x3 -> 3x3 homogeneous matrix."""
    out = np.eye(3)
    out[:2, :] = np.asarray(m, dtype=np.float64).reshape(2, 3)
    return out


def from_h(m: np.ndarray) -> np.ndarray:
    return np.asarray(m, dtype=np.float64)[:2, :].copy()


def translation(tx: float, ty: float) -> np.ndarray:
    out = np.eye(3)
    out[0, 2] = tx
    out[1, 2] = ty
    return out


def rotation_scale(theta: float, scale: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """Rotation by ``theta`` radians and isotropic scale about ``center`` (3x3)."""
    c, s = np.cos(theta) * scale, np.sin(theta) * scale
    lin = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    cx, cy = center
    return translation(cx, cy) @ lin @ translation(-cx, -cy)


def apply(m: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply a 2x3 or 3x3 affine to coordinate arrays."""
    m = np.asarray(m, dtype=np.float64)
    return (
        m[0, 0] * xs + m[0, 1] * ys + m[0, 2],
        m[1, 0] * xs + m[1, 1] * ys + m[1, 2],
    )


def det2(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def flow_from_affine(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Dense flow p -> m(p) - p over an (H, W) pixel grid."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    X, Y = apply(m, xs, ys)
    return np.stack([X - xs, Y - ys], axis=-1)


def fit_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares 2x3 affine mapping src points (N, 2) onto dst points.

    Solves the normal equations on centred, scaled coordinates with
    fixed-order reductions so results do not depend on BLAS threading.
    Raises ``np.linalg.LinAlgError`` when the point set has rank < 3.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[0] < 3:
        raise np.linalg.LinAlgError("need at least 3 correspondences")
    mean = src.mean(axis=0)
    scale = float(np.abs(src - mean).max()) or 1.0
    u = (src - mean) / scale
    X = np.column_stack([u, np.ones(len(u))])
    XtX = (X[:, :, None] * X[:, None, :]).sum(axis=0)
    if np.linalg.matrix_rank(XtX, tol=1e-9 * max(1.0, float(np.abs(XtX).max()))) < 3:
        raise np.linalg.LinAlgError("degenerate correspondence set (rank < 3)")
    Xty = (X[:, :, None] * dst[:, None, :]).sum(axis=0)
    coef = np.linalg.solve(XtX, Xty)  # (3, 2): rows for u_x, u_y, 1
    lin = coef[:2, :].T / scale
    t = coef[2, :] - lin @ mean
    return np.column_stack([lin, t])
