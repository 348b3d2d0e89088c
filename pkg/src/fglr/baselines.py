"""Two-stage comparison pipelines: demosaick first, then remap bilinearly.

``demosaic_bilinear`` averages the in-bounds same-color CFA neighbors of each
missing sample. ``demosaic_hql`` applies the classic gradient-corrected 5x5
linear filter bank (gains 1/2, 5/8, 3/4) on the raw mosaic with mirrored
borders. Both copy captured samples through unchanged and are linear
operators before the final clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .imgcore import PlanarImage

# Gradient-corrected filter bank, x8. _KH has its distance-1 same-color taps
# horizontal, _KV vertical, _KD diagonal, _KG is the green cross.
_KG = np.array(
    [
        [0, 0, -1, 0, 0],
        [0, 0, 2, 0, 0],
        [-1, 2, 4, 2, -1],
        [0, 0, 2, 0, 0],
        [0, 0, -1, 0, 0],
    ],
    dtype=np.float64,
) / 8.0
_KH = np.array(
    [
        [0, 0, 0.5, 0, 0],
        [0, -1, 0, -1, 0],
        [-1, 4, 5, 4, -1],
        [0, -1, 0, -1, 0],
        [0, 0, 0.5, 0, 0],
    ],
    dtype=np.float64,
) / 8.0
_KV = _KH.T
_KD = np.array(
    [
        [0, 0, -1.5, 0, 0],
        [0, 2, 0, 2, 0],
        [-1.5, 0, 6, 0, -1.5],
        [0, 2, 0, 2, 0],
        [0, 0, -1.5, 0, 0],
    ],
    dtype=np.float64,
) / 8.0

HQL_KERNELS = {"cross": _KG, "horizontal": _KH, "vertical": _KV, "diagonal": _KD}


@dataclass(frozen=True)
class BaselineKind:
    demosaicker: str = "bilinear"
    rectifier: str = "bilinear"

    def __post_init__(self):
        if self.demosaicker not in ("bilinear", "hql"):
            raise ValueError(f"unknown demosaicker {self.demosaicker!r}")
        if self.rectifier != "bilinear":
            raise ValueError(f"unknown rectifier {self.rectifier!r}")


def demosaic_bilinear_plane(data, layout):
    """Bilinear demosaic of a raw mosaic array; linear, no clamping."""
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape
    kernel = np.ones((3, 3))
    kernel[1, 1] = 0.0
    out = np.empty((h, w, 3))
    for ci, channel in enumerate("RGB"):
        mask = layout.channel_mask(w, h, channel)
        total = scipy.ndimage.convolve(data * mask, kernel, mode="constant", cval=0.0)
        count = scipy.ndimage.convolve(mask.astype(np.float64), kernel, mode="constant", cval=0.0)
        interp = total / np.maximum(count, 1.0)
        out[:, :, ci] = np.where(mask, data, interp)
    return out


def demosaic_bilinear(bayer):
    """Interpolate missing colors as the mean of in-bounds same-color neighbors."""
    return PlanarImage(demosaic_bilinear_plane(bayer.data, bayer.layout))


def demosaic_hql_plane(data, layout):
    """Gradient-corrected linear demosaic of a raw mosaic array; no clamping."""
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape
    # Convolve the mean-centered signal: the kernels are normalized, so this
    # is the same filter but constants survive bit-exactly.
    mean = data.mean()
    conv = {
        name: mean + scipy.ndimage.convolve(data - mean, k, mode="mirror")
        for name, k in HQL_KERNELS.items()
    }
    r_mask = layout.channel_mask(w, h, "R")
    g_mask = layout.channel_mask(w, h, "G")
    b_mask = layout.channel_mask(w, h, "B")
    # Green phase with same-row red neighbors (G1) vs same-column (G2).
    yy, xx = np.mgrid[0:h, 0:w]
    g1 = g_mask & ((yy + layout.oy) % 2 == 0)
    g2 = g_mask & ~g1

    out = np.empty((h, w, 3))
    out[:, :, 0] = np.select(
        [r_mask, g1, g2, b_mask], [data, conv["horizontal"], conv["vertical"], conv["diagonal"]]
    )
    out[:, :, 1] = np.where(g_mask, data, conv["cross"])
    out[:, :, 2] = np.select(
        [b_mask, g1, g2, r_mask], [data, conv["vertical"], conv["horizontal"], conv["diagonal"]]
    )
    return out


def demosaic_hql(bayer):
    """High-quality linear demosaic; output clamped to [0, 1]."""
    return PlanarImage(np.clip(demosaic_hql_plane(bayer.data, bayer.layout), 0.0, 1.0))


def rectify_bilinear(img, table):
    """Resample a demosaicked image onto the rectified grid.

    Each valid output pixel bilinearly samples the input at its mapped
    location; invalid pixels are 0.
    """
    h, w = table.height, table.width
    out = np.zeros((h, w, 3))
    ys, xs = np.nonzero(table.valid)
    if len(ys):
        sx = table.coords[ys, xs, 0]
        sy = table.coords[ys, xs, 1]
        x0 = np.clip(np.floor(sx).astype(np.int64), 0, img.width - 1)
        y0 = np.clip(np.floor(sy).astype(np.int64), 0, img.height - 1)
        x1 = np.minimum(x0 + 1, img.width - 1)
        y1 = np.minimum(y0 + 1, img.height - 1)
        u = (sx - x0)[:, None]
        v = (sy - y0)[:, None]
        data = img.data
        sample = (
            data[y0, x0] * (1 - u) * (1 - v)
            + data[y0, x1] * u * (1 - v)
            + data[y1, x0] * (1 - u) * v
            + data[y1, x1] * u * v
        )
        out[ys, xs] = sample
    return PlanarImage(out)


def run_baseline(bayer, table, kind=BaselineKind()):
    """Demosaick then rectify; the two-stage pipeline under comparison."""
    demosaic = demosaic_bilinear if kind.demosaicker == "bilinear" else demosaic_hql
    return rectify_bilinear(demosaic(bayer), table)
