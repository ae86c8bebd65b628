"""Similarity and trend statistics for saliency maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata


@dataclass(frozen=True)
class SSIMParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM stabilizers must be positive")
        if self.window <= 0 or self.sigma <= 0:
            raise ValueError("SSIM window must be positive")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian window (weights sum to one)."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def joint_minmax(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale both maps to [0, 1] with a common min and max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return np.zeros_like(a), np.zeros_like(b)
    return (a - lo) / (hi - lo), (b - lo) / (hi - lo)


def _window_for(shape, params: SSIMParams) -> tuple[np.ndarray, bool]:
    h, w = shape
    if h >= params.window and w >= params.window:
        return gaussian_window(params.window, params.sigma), False
    # maps smaller than the window fall back to one uniform window of the map size
    return np.full((h, w), 1.0 / (h * w)), True


def ssim_map(a: np.ndarray, b: np.ndarray, params: SSIMParams = SSIMParams()):
    """Local SSIM values over every valid window position.

    Returns ``(local_map, used_uniform_window)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D maps")
    win, uniform = _window_for(a.shape, params)

    def filt(img):
        return np.tensordot(sliding_window_view(img, win.shape), win, axes=([2, 3], [0, 1]))

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den, uniform


def ssim(a: np.ndarray, b: np.ndarray, params: SSIMParams = SSIMParams(),
         normalize: bool = True) -> float:
    """Mean SSIM between two 2-D maps after joint min-max normalization."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if normalize:
        a, b = joint_minmax(a, b)
    local, _ = ssim_map(a, b, params)
    return float(np.clip(local.mean(), -1.0, 1.0))


def mean_ssim(maps_a: np.ndarray, maps_b: np.ndarray, params: SSIMParams = SSIMParams()) -> float:
    """Average of per-image SSIMs over a stack of (N, H, W) maps."""
    if maps_a.shape != maps_b.shape:
        raise ValueError(f"shape mismatch: {maps_a.shape} vs {maps_b.shape}")
    return float(np.mean([ssim(a, b, params) for a, b in zip(maps_a, maps_b)]))


@dataclass(frozen=True)
class Correlation:
    value: float
    undefined: bool = False

    def __float__(self):
        return self.value


def spearman(xs, ys) -> Correlation:
    """Spearman rank correlation (Pearson on average ranks).

    A constant sequence makes the coefficient undefined; it is reported as
    0.0 with ``undefined=True``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two 1-D sequences of equal length")
    if len(xs) < 3:
        raise ValueError("spearman needs at least 3 points")
    rx = rankdata(xs) - (len(xs) + 1) / 2.0
    ry = rankdata(ys) - (len(ys) + 1) / 2.0
    den = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if den == 0:
        return Correlation(0.0, True)
    return Correlation(float(np.clip((rx * ry).sum() / den, -1.0, 1.0)))


def vector_similarity(a, b) -> Correlation:
    """Cosine similarity between two attribution vectors (diagnostic only)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return Correlation(0.0, True)
    return Correlation(float(np.clip(a @ b / (na * nb), -1.0, 1.0)))
