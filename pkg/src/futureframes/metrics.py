"""Image fidelity metrics and per-horizon evaluation reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imagecore import gaussian_pyramid

K1 = 0.01
K2 = 0.03
DATA_RANGE = 1.0
WIN_SIZE = 11
WIN_SIGMA = 1.5
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
BUCKETS = (1, 3, 5, 10)


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _as_hwc(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _window_for(shape) -> int:
    size = min(WIN_SIZE, shape[0], shape[1])
    return size if size % 2 == 1 else size - 1


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    # Separable Gaussian; cropping the reflected border leaves only windows
    # that lie fully inside the image.
    r = len(win) // 2
    out = ndimage.correlate1d(x, win, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, win, axis=1, mode="reflect")
    if r == 0:
        return out
    return out[r:-r, r:-r]


def ssim_components(a, b, win_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean SSIM and mean contrast-structure term.

    Returns two arrays of length C.
    """
    a = _as_hwc(a)
    b = _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    size = win_size or _window_for(a.shape)
    win = gaussian_window(size)
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    ssim_vals, cs_vals = [], []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mu_x * mu_x
        syy = _filter_valid(y * y, win) - mu_y * mu_y
        sxy = _filter_valid(x * y, win) - mu_x * mu_y
        cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
        lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
        ssim_vals.append((lum * cs_map).mean())
        cs_vals.append(cs_map.mean())
    return np.array(ssim_vals), np.array(cs_vals)


def ssim(a, b, win_size: int | None = None) -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    s, _ = ssim_components(a, b, win_size)
    return float(s.mean())


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of dyadic scales for which the coarsest level still fits a window."""
    m = min(height, width)
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and m >= WIN_SIZE * 2**scales:
        scales += 1
    return scales


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM over up to five binomial-pyramid scales.

    Images smaller than 176 px on their short side use fewer scales with the
    leading exponents renormalised to sum to one. Negative contrast-structure
    values are clipped to zero before exponentiation.
    """
    a = _as_hwc(a)
    b = _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    scales = ms_ssim_scales(a.shape[0], a.shape[1])
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    w = w / w.sum()
    pa = gaussian_pyramid(a, scales) if scales > 1 else [a]
    pb = gaussian_pyramid(b, scales) if scales > 1 else [b]
    result = np.ones(a.shape[2])
    for j in range(scales):
        s, cs = ssim_components(pa[j], pb[j])
        term = s if j == scales - 1 else cs
        result *= np.maximum(term, 0.0) ** w[j]
    return float(result.mean())


def psnr(a, b) -> float:
    mse = float(np.mean((_as_hwc(a) - _as_hwc(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE**2 / mse)


def mean_l1(a, b) -> float:
    return float(np.mean(np.abs(_as_hwc(a) - _as_hwc(b))))


METRIC_KEYS = ("ms_ssim", "ssim", "psnr", "l1")
METRIC_LABELS = {"ms_ssim": "MS-SSIM", "ssim": "SSIM", "psnr": "PSNR", "l1": "L1"}


@dataclass
class EvalReport:
    per_horizon: list = field(default_factory=list)
    buckets: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(row):
            return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in row.items()}

        return {
            "per_horizon": [clean(r) for r in self.per_horizon],
            "buckets": {k: clean(v) for k, v in self.buckets.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self, label: str = "Ours") -> str:
        """Plain-text table laid out like a results table: buckets x metrics."""
        names = list(self.buckets)
        cols = [(n, k) for n in names for k in METRIC_KEYS]
        width = 10
        head1 = f"{'':<12}" + "".join(f"{n:^{width * len(METRIC_KEYS)}}" for n in names)
        head2 = f"{'':<12}" + "".join(f"{METRIC_LABELS[k]:>{width}}" for _, k in cols)
        row = f"{label:<12}" + "".join(
            f"{_fmt(self.buckets[n][k]):>{width}}" for n, k in cols
        )
        lines = [head1.rstrip(), head2, row, ""]
        lines.append(f"{'horizon':<12}" + "".join(f"{METRIC_LABELS[k]:>{width}}" for k in METRIC_KEYS))
        for r in self.per_horizon:
            lines.append(
                f"{'t+%d' % r['horizon']:<12}" + "".join(f"{_fmt(r[k]):>{width}}" for k in METRIC_KEYS)
            )
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isinf(v)):
        return "inf"
    return f"{v:.4f}"


def bucket_name(k: int) -> str:
    return "Next frame" if k == 1 else f"Next {k} frames"


def evaluate(predicted, truth) -> EvalReport:
    """Per-horizon metrics and averages over the first k predicted frames."""
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted frames vs {len(truth)} ground-truth frames")
    report = EvalReport()
    for h, (p, g) in enumerate(zip(predicted, truth), start=1):
        report.per_horizon.append(
            {
                "horizon": h,
                "ms_ssim": ms_ssim(p, g),
                "ssim": ssim(p, g),
                "psnr": psnr(p, g),
                "l1": mean_l1(p, g),
            }
        )
    n = len(report.per_horizon)
    for k in BUCKETS:
        if k > n:
            continue
        used = report.per_horizon[:k]
        report.buckets[bucket_name(k)] = {
            key: float(np.mean([r[key] for r in used])) for key in METRIC_KEYS
        } | {"frames": len(used)}
    return report
