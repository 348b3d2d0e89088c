"""PSNR and SSIM over the valid region of interest.

Both metrics operate on [0, 1] images; PSNR is reported against peak 1.0 and
returns ``math.inf`` for identical inputs. SSIM uses the standard 11x11
Gaussian window (sigma 1.5, K1=0.01, K2=0.03, dynamic range 1), computed per
channel and averaged; windows that overlap invalid pixels or the image border
are excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

_WINDOW = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _check_pair(a, b, mask):
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    if mask is None:
        mask = np.ones(a.data.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.data.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {a.data.shape[:2]}")
    return mask


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB over masked pixels; inf when equal."""
    mask = _check_pair(a, b, mask)
    if not mask.any():
        raise ValueError("empty mask")
    diff = (a.data - b.data)[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window():
    half = _WINDOW // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * _SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b, mask=None):
    """Mean SSIM over fully-valid windows, averaged across channels."""
    mask = _check_pair(a, b, mask)
    h, w = mask.shape
    if h < _WINDOW or w < _WINDOW:
        raise ValueError(f"image {w}x{h} smaller than the {_WINDOW}x{_WINDOW} SSIM window")
    half = _WINDOW // 2
    crop = (slice(half, h - half), slice(half, w - half))
    ok = scipy.ndimage.minimum_filter(mask, size=_WINDOW, mode="constant", cval=False)[crop]
    if not ok.any():
        raise ValueError("no fully-valid SSIM window inside the mask")

    kernel = _gaussian_window()
    conv = lambda plane: scipy.ndimage.convolve(plane, kernel, mode="constant")[crop]
    c1, c2 = _K1**2, _K2**2
    values = []
    for c in range(3):
        pa, pb = a.data[:, :, c], b.data[:, :, c]
        mu_a, mu_b = conv(pa), conv(pb)
        var_a = conv(pa * pa) - mu_a**2
        var_b = conv(pb * pb) - mu_b**2
        cov = conv(pa * pb) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        values.append(float(np.mean((num / den)[ok])))
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Per-image quality numbers for one method, plus their means.

    Infinite PSNR entries (identical images) are excluded from the mean and
    rendered as the string "inf" in reports.
    """

    method: str
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)
    valid_pixels: list[int] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)

    def add(self, label, psnr_db, ssim_value, valid_count):
        self.labels.append(label)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_value)
        self.valid_pixels.append(int(valid_count))

    @property
    def mean_psnr(self):
        finite = [v for v in self.psnr_values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim_values)) if self.ssim_values else math.nan


def format_psnr(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"
