"""Image containers, Bayer mosaicking, noise injection and file I/O.

Intensities are floating point in [0, 1] throughout; 8-bit data is divided
by 255 on load. All containers are immutable after construction (the wrapped
numpy arrays are marked read-only) so they can be shared freely across
worker threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import cv2
import numpy as np

# RGGB quad: index [row % 2][col % 2] -> channel index (0=R, 1=G, 2=B).
_RGGB = ((0, 1), (1, 2))
_CHANNEL_NAMES = "RGB"

_FLOAT_MAGIC = b"FGLR"


@dataclass(frozen=True)
class CFALayout:
    """RGGB color filter array with a configurable phase offset.

    ``ox``/``oy`` shift the pattern so that the pixel at (x, y) carries the
    color of the canonical RGGB quad at ((x+ox) % 2, (y+oy) % 2).
    """

    ox: int = 0
    oy: int = 0

    def channel_index(self, x, y):
        """Channel index (0=R, 1=G, 2=B) captured at pixel (x, y)."""
        return _RGGB[(y + self.oy) % 2][(x + self.ox) % 2]

    def color_at(self, x, y):
        return _CHANNEL_NAMES[self.channel_index(x, y)]

    def channel_mask(self, width, height, channel):
        """Boolean (height, width) mask of sites capturing ``channel`` ('R'|'G'|'B')."""
        ci = _CHANNEL_NAMES.index(channel)
        yy, xx = np.mgrid[0:height, 0:width]
        idx = np.asarray(_RGGB)[(yy + self.oy) % 2, (xx + self.ox) % 2]
        return idx == ci

    def shifted(self, dx, dy):
        """Layout seen by a window whose origin sits at (dx, dy) of this grid."""
        return CFALayout((self.ox + dx) % 2, (self.oy + dy) % 2)


class PlanarImage:
    """H x W x 3 RGB image with samples in [0, 1].

    Values outside [0, 1] are clamped at construction; every public
    operation in the package returns clamped planar images.
    """

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def plane(self, channel):
        """Single channel plane, ``channel`` in {'R','G','B'} or 0..2."""
        if isinstance(channel, str):
            channel = _CHANNEL_NAMES.index(channel)
        return self.data[:, :, channel]

    def __eq__(self, other):
        return isinstance(other, PlanarImage) and np.array_equal(self.data, other.data)


class BayerImage:
    """Single-plane raw capture with RGGB layout metadata.

    Width and height must be even so the frame holds whole RGGB quads.
    """

    def __init__(self, data, layout=CFALayout()):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {arr.shape}")
        if arr.shape[0] % 2 or arr.shape[1] % 2:
            raise ValueError(f"Bayer dimensions must be even, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        self.data = arr
        self.layout = layout

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def color_at(self, x, y):
        return self.layout.color_at(x, y)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise: std deviation on the 8-bit [0, 255] scale."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def mosaic(img, layout=CFALayout()):
    """Drop two of three color samples per pixel according to the CFA.

    Each output sample equals the input sample of the channel the CFA
    selects at that location. Dimensions must be even.
    """
    if img.height % 2 or img.width % 2:
        raise ValueError(f"mosaic requires even dimensions, got {img.height}x{img.width}")
    yy, xx = np.mgrid[0 : img.height, 0 : img.width]
    idx = np.asarray(_RGGB)[(yy + layout.oy) % 2, (xx + layout.ox) % 2]
    plane = np.take_along_axis(img.data, idx[:, :, None], axis=2)[:, :, 0]
    return BayerImage(plane, layout)


def add_noise(img, spec):
    """Add clamped i.i.d. Gaussian noise, deterministic for a fixed seed.

    The noise is drawn on the 8-bit scale and divided by 255, matching the
    convention that sigma=15 means 15/255 on the normalized scale.
    """
    if spec.sigma == 0:
        return img
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.sigma, size=img.data.shape) / 255.0
    return BayerImage(np.clip(img.data + noise, 0.0, 1.0), img.layout)


# ---------------------------------------------------------------------------
# File I/O: PNG (8/16-bit via OpenCV), binary PPM/PGM, raw float dump.
# ---------------------------------------------------------------------------


def write_image(img, path, bitdepth=16):
    """Write a PlanarImage; format chosen from the file suffix.

    Supported: .png (8- or 16-bit), .ppm (binary P6, 8- or 16-bit),
    .fglr (lossless little-endian float dump).
    """
    path = str(path)
    if path.endswith(".png"):
        _write_png(img.data, path, bitdepth)
    elif path.endswith(".ppm"):
        _write_pnm(img.data, path, bitdepth)
    elif path.endswith(".fglr"):
        _write_float_dump(img.data, path)
    else:
        raise ValueError(f"unsupported image format: {path}")


def read_image(path):
    """Read a PlanarImage written by :func:`write_image`."""
    arr = _read_array(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] != 3:
        raise ValueError(f"expected 3 channels in {path}, got {arr.shape[2]}")
    return PlanarImage(arr)


def write_plane(data, path, bitdepth=16):
    """Write a single 2-D plane in [0, 1] as .png, .pgm or .fglr."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {arr.shape}")
    path = str(path)
    if path.endswith(".png"):
        _write_png(arr, path, bitdepth)
    elif path.endswith(".pgm"):
        _write_pnm(arr, path, bitdepth)
    elif path.endswith(".fglr"):
        _write_float_dump(arr[:, :, None], path)
    else:
        raise ValueError(f"unsupported image format: {path}")


def read_plane(path):
    """Read a 2-D plane written by :func:`write_plane`."""
    arr = _read_array(path)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError(f"expected 1 channel in {path}, got {arr.shape[2]}")
        arr = arr[:, :, 0]
    return arr


def _quantize(data, bitdepth):
    if bitdepth == 8:
        return np.round(data * 255.0).astype(np.uint8)
    if bitdepth == 16:
        return np.round(data * 65535.0).astype(np.uint16)
    raise ValueError(f"bitdepth must be 8 or 16, got {bitdepth}")


def _write_png(data, path, bitdepth):
    raw = _quantize(np.clip(data, 0.0, 1.0), bitdepth)
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, raw):
        raise IOError(f"failed to write {path}")


def _write_pnm(data, path, bitdepth):
    raw = _quantize(np.clip(data, 0.0, 1.0), bitdepth)
    if raw.dtype == np.uint16:
        raw = raw.byteswap()  # netpbm 16-bit is big-endian
    magic = b"P6" if data.ndim == 3 else b"P5"
    maxval = 255 if bitdepth == 8 else 65535
    header = b"%s\n%d %d\n%d\n" % (magic, data.shape[1], data.shape[0], maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw.tobytes())


def _write_float_dump(data, path):
    h, w, c = data.shape
    with open(path, "wb") as fh:
        fh.write(_FLOAT_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_array(path):
    path = str(path)
    if path.endswith(".png"):
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise IOError(f"cannot read {path}")
        if raw.ndim == 3:
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        scale = 255.0 if raw.dtype == np.uint8 else 65535.0
        return raw.astype(np.float64) / scale
    if path.endswith((".ppm", ".pgm")):
        return _read_pnm(path)
    if path.endswith(".fglr"):
        return _read_float_dump(path)
    raise ValueError(f"unsupported image format: {path}")


def _read_pnm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM magic {magic!r} in {path}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment runs to end of line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height * channels
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    arr = arr.reshape(height, width, channels).astype(np.float64) / maxval
    return arr[:, :, 0] if channels == 1 else arr


def _read_float_dump(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _FLOAT_MAGIC:
        raise ValueError(f"bad magic in {path}")
    w, h, c = struct.unpack("<III", blob[4:16])
    arr = np.frombuffer(blob, dtype="<f4", count=w * h * c, offset=16)
    return arr.reshape(h, w, c).astype(np.float64)
