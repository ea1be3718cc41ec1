"""Image quality metrics for images in [-1, 1]: MSE, PSNR and SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PEAK = 2.0
PSNR_CAP = 99.0

_WIN = 11
_WIN_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float

    def row(self) -> dict[str, float]:
        return {"mse": self.mse, "psnr": csv_psnr(self.psnr), "ssim": self.ssim}


def _check(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = PEAK) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def csv_psnr(value: float) -> float:
    """PSNR as written to CSV files, with the infinite sentinel capped."""
    return PSNR_CAP if math.isinf(value) else value


def gaussian_window(size: int = _WIN, sigma: float = _WIN_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation, then crop to windows fully inside the image
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    r = len(g) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = PEAK) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Grayscale ``(H, W)`` or channel-last ``(H, W, C)`` inputs; channels are
    scored independently and averaged.
    """
    a, b = _check(a, b)
    if a.shape[0] < _WIN or a.shape[1] < _WIN:
        raise ValueError(f"ssim needs images at least {_WIN}x{_WIN}, got {a.shape[:2]}")
    if np.array_equal(a, b):
        return 1.0
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window()
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _valid_filter(x, g), _valid_filter(y, g)
        vx = _valid_filter(x * x, g) - mx**2
        vy = _valid_filter(y * y, g) - my**2
        cxy = _valid_filter(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx**2 + my**2 + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def report(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(mse=mse(a, b), psnr=psnr(a, b), ssim=ssim(a, b))
