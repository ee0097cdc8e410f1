"""Independent brute-force references used to check the implementation.

These deliberately avoid the code paths under test: dense 2-D convolution
(direct summation or FFT) instead of separable 1-D passes, shifted-array
maxima scans instead of rank filters, and explicit per-pixel loops for disk
masses.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from lassr.arm import ArmConfig, ResidualImage


def dog_kernel_2d(sigma: float) -> np.ndarray:
    """Unit-sum 2-D Gaussian truncated at ceil(3*sigma), built directly."""
    radius = math.ceil(3.0 * sigma)
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    k = np.exp(-(yy**2 + xx**2) / (2.0 * sigma**2))
    return k / k.sum()


def _convolve_symmetric(data: np.ndarray, kernel: np.ndarray, method: str) -> np.ndarray:
    pad = kernel.shape[0] // 2
    padded = np.pad(data, pad, mode="symmetric")
    if method == "fft":
        full = fftconvolve(padded, kernel, mode="valid")
        return full
    # direct dense summation over every output pixel
    h, w = data.shape
    out = np.zeros_like(data, dtype=np.float64)
    kh = kernel.shape[0]
    for i in range(h):
        for j in range(w):
            out[i, j] = float((padded[i : i + kh, j : j + kh] * kernel).sum())
    return out


def oracle_dog_response(residual: ResidualImage, cfg: ArmConfig, method: str = "fft") -> np.ndarray:
    s1, s2 = cfg.sigmas(residual.source_size)
    data = residual.data.astype(np.float64)
    k1, k2 = dog_kernel_2d(s1), dog_kernel_2d(s2)
    return _convolve_symmetric(data, k1, method) - _convolve_symmetric(data, k2, method)


def oracle_local_maxima(
    response: np.ndarray, nms_window: int, threshold: float
) -> list[tuple[int, int]]:
    """Exhaustive scan: a pixel survives when it is >= every neighbor in the
    centered window (window truncated at borders) and >= threshold."""
    h, w = response.shape
    half = nms_window // 2
    keep = []
    for i in range(h):
        for j in range(w):
            v = response[i, j]
            if v < threshold:
                continue
            lo_i, hi_i = max(0, i - half), min(h, i + half + 1)
            lo_j, hi_j = max(0, j - half), min(w, j + half + 1)
            if v >= response[lo_i:hi_i, lo_j:hi_j].max():
                keep.append((i, j))
    return keep


def oracle_disk_mass(data: np.ndarray, center: tuple[int, int], radius: float) -> float:
    h, w = data.shape
    total = 0.0
    r2 = radius * radius
    for i in range(h):
        for j in range(w):
            if (i - center[0]) ** 2 + (j - center[1]) ** 2 <= r2:
                total += float(data[i, j])
    return total


def oracle_blobs(residual: ResidualImage, cfg: ArmConfig, method: str = "fft"):
    """Full reference pipeline: response, maxima, masses, filtering, ordering."""
    response = oracle_dog_response(residual, cfg, method)
    maxima = oracle_local_maxima(response, cfg.nms_window, cfg.response_threshold)
    s1, s2 = cfg.sigmas(residual.source_size)
    radius = math.sqrt(2.0) * math.sqrt(s1 * s2)
    blobs = []
    for center in maxima:
        mass = oracle_disk_mass(residual.data, center, radius)
        if mass < cfg.min_mass:
            continue
        blobs.append(
            {"center": center, "response": float(response[center]), "mass": mass}
        )
    blobs.sort(key=lambda b: (-b["response"], b["center"]))
    return blobs


def plant_gaussian_bump(
    size: int, center: tuple[float, float], sigma: float, amplitude: float = 1.0
) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return amplitude * np.exp(
        -((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * sigma**2)
    )


def make_bump_corpus(n_images: int, size: int, seed: int):
    """Seeded residuals with 0-3 planted bumps, plus the planted centers."""
    corpora = []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        n_bumps = int(rng.integers(0, 4))
        res = np.zeros((size, size), dtype=np.float64)
        centers = []
        margin = size * 0.25
        for _ in range(n_bumps):
            # keep bumps separated so each yields exactly one maximum
            for _ in range(50):
                c = rng.uniform(margin, size - margin, 2)
                if all(np.hypot(c[0] - p[0], c[1] - p[1]) > size * 0.3 for p in centers):
                    break
            sigma = rng.uniform(6.0, 9.0)
            amp = rng.uniform(0.6, 1.0)
            res += plant_gaussian_bump(size, tuple(c), sigma, amp)
            centers.append(tuple(c))
        corpora.append((ResidualImage(data=res, source_size=size), centers))
    return corpora
