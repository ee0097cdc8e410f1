"""Artifact removal core: blob detection on the SR-HR residual and its loss.

The residual between a super-resolved image and its ground truth is scanned
with a two-kernel difference of Gaussians. Local maxima of the band-pass
response mark stamp-like artifact blobs; the training penalty is the sum of
residual mass inside the detected blob disks. Blob geometry is held constant
per call, so the penalty's gradient flows through pixel values only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy.ndimage import correlate1d, maximum_filter

DEFAULT_SIGMA1_RATIO = 0.078
DEFAULT_SIGMA2_RATIO = 0.104


@dataclass(frozen=True)
class ArmConfig:
    """Detector knobs. Sigma ratios scale with the training crop side N."""

    sigma1_ratio: float = DEFAULT_SIGMA1_RATIO
    sigma2_ratio: float = DEFAULT_SIGMA2_RATIO
    response_threshold: float = 0.02
    min_mass: float = 0.0
    nms_window: int = 3

    def __post_init__(self):
        if not 0 < self.sigma1_ratio < self.sigma2_ratio:
            raise ValueError(
                f"require 0 < sigma1_ratio < sigma2_ratio, got "
                f"{self.sigma1_ratio} and {self.sigma2_ratio}"
            )
        if self.response_threshold < 0 or self.min_mass < 0:
            raise ValueError("thresholds must be >= 0")
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError(f"nms_window must be an odd integer >= 3, got {self.nms_window}")

    def sigmas(self, source_size: int) -> tuple[float, float]:
        return self.sigma1_ratio * source_size, self.sigma2_ratio * source_size

    def blob_radius(self, source_size: int) -> float:
        s1, s2 = self.sigmas(source_size)
        return math.sqrt(2.0) * math.sqrt(s1 * s2)


@dataclass(frozen=True)
class ResidualImage:
    """Non-negative single-channel residual plus the crop side used for sigma scaling."""

    data: np.ndarray
    source_size: int

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"residual must be 2-D, got shape {self.data.shape}")
        if self.source_size <= 0:
            raise ValueError(f"source_size must be positive, got {self.source_size}")


@dataclass(frozen=True)
class Blob:
    """One detected artifact region."""

    center: tuple[int, int]
    sigma_eff: float
    radius: float
    response: float
    mass: float


def subtract(
    sr: np.ndarray, hr: np.ndarray, source_size: Optional[int] = None
) -> ResidualImage:
    """Per-pixel channel mean of |hr - sr|.

    source_size defaults to the smaller image side; pass the training crop
    side explicitly when auditing images of a different size.
    """
    sr = np.asarray(sr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if sr.shape != hr.shape:
        raise ValueError(f"sr shape {sr.shape} does not match hr shape {hr.shape}")
    diff = np.abs(hr - sr)
    if diff.ndim == 3:
        diff = diff.mean(axis=2)
    elif diff.ndim != 2:
        raise ValueError(f"expected HW or HWC images, got shape {sr.shape}")
    if source_size is None:
        source_size = min(diff.shape)
    return ResidualImage(data=diff, source_size=source_size)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian truncated at ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _blur(data: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel_1d(sigma)
    if len(k) > min(data.shape):
        raise ValueError(
            f"Gaussian kernel of width {len(k)} (sigma={sigma:.3f}) exceeds the "
            f"{data.shape[0]}x{data.shape[1]} residual; use a larger image or "
            f"smaller sigma ratios"
        )
    out = correlate1d(data, k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def dog_response(residual: ResidualImage, cfg: ArmConfig) -> np.ndarray:
    """Band-pass response G(sigma1)*r - G(sigma2)*r with reflective borders."""
    s1, s2 = cfg.sigmas(residual.source_size)
    data = residual.data.astype(np.float64)
    return _blur(data, s1) - _blur(data, s2)


def disk_mask(
    shape: tuple[int, int], center: tuple[int, int], radius: float
) -> np.ndarray:
    """Boolean mask of pixels with squared distance <= radius^2, clipped to bounds."""
    rows = np.arange(shape[0])[:, None] - center[0]
    cols = np.arange(shape[1])[None, :] - center[1]
    return rows**2 + cols**2 <= radius**2


def detect_blobs(residual: ResidualImage, cfg: ArmConfig) -> list[Blob]:
    """Thresholded NMS maxima of the DoG response, with disk-summed masses.

    A pixel survives NMS when it equals the maximum over the centered
    nms_window square (window truncated at image borders). Output is sorted
    by descending response with (row, col) tie-breaking.
    """
    response = dog_response(residual, cfg)
    footprint_max = maximum_filter(
        response, size=cfg.nms_window, mode="constant", cval=-np.inf
    )
    is_max = (response >= footprint_max) & (response >= cfg.response_threshold)
    s1, s2 = cfg.sigmas(residual.source_size)
    sigma_eff = math.sqrt(s1 * s2)
    radius = math.sqrt(2.0) * sigma_eff

    blobs = []
    for row, col in np.argwhere(is_max):
        mask = disk_mask(residual.data.shape, (row, col), radius)
        mass = float(residual.data[mask].sum())
        if mass < cfg.min_mass:
            continue
        blobs.append(
            Blob(
                center=(int(row), int(col)),
                sigma_eff=sigma_eff,
                radius=radius,
                response=float(response[row, col]),
                mass=mass,
            )
        )
    blobs.sort(key=lambda b: (-b.response, b.center))
    return blobs


def _channel_mean_absdiff(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"sr shape {tuple(sr.shape)} does not match hr shape {tuple(hr.shape)}")
    if sr.dim() == 2:
        return (hr - sr).abs()
    if sr.dim() == 3:
        return (hr - sr).abs().mean(dim=0)
    raise ValueError(f"expected a CHW or HW tensor, got shape {tuple(sr.shape)}")


def arm_loss(
    sr: torch.Tensor,
    hr: torch.Tensor,
    cfg: ArmConfig,
    source_size: Optional[int] = None,
) -> torch.Tensor:
    """Sum of residual mass over detected blob disks, for one CHW image pair.

    Detection runs on a detached copy; the returned scalar recomputes the
    masses with gradient tracking, so d(loss)/d(sr) is the blob-coverage
    count times the residual sign and blob geometry carries no gradient.
    Overlapping disks each contribute their own mass. Returns exactly 0
    when nothing is detected.
    """
    residual = _channel_mean_absdiff(sr.double(), hr.double())
    with torch.no_grad():
        res_np = residual.detach().cpu().numpy()
    n = source_size if source_size is not None else min(res_np.shape)
    blobs = detect_blobs(ResidualImage(data=res_np, source_size=n), cfg)
    if not blobs:
        return sr.new_zeros((), dtype=torch.float64)
    coverage = np.zeros(res_np.shape, dtype=np.float64)
    for blob in blobs:
        coverage += disk_mask(res_np.shape, blob.center, blob.radius)
    weight = torch.from_numpy(coverage).to(residual.device)
    return (residual * weight).sum()
