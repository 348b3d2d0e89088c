"""Fisheye camera model and the reverse mapping to Bayer-grid coordinates.

The reverse mapping takes an integer pixel of the rectified output, casts the
corresponding pinhole ray, rotates it into the fisheye frame and projects it
through the radial fisheye model, yielding a real-valued coordinate on the
sensor grid. Everything downstream (interpolation operator, gradient
observations) consumes the precomputed :class:`MappingTable`.

Radial models:
  equidistant   r(theta) = fc * theta
  pinhole       r(theta) = fc * tan(theta)       (exact identity mappings)
  polynomial    r(theta) = a0 + a2 t^2 + a3 t^3 + a4 t^4   (OCamCalib-style)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODELS = ("equidistant", "pinhole", "polynomial")

# Unique 8-connected neighbor directions (east, south, south-east, south-west);
# iterating these once per pixel enumerates every pair exactly once.
PAIR_DIRECTIONS = ((1, 0), (0, 1), (1, 1), (-1, 1))


class ConfigError(ValueError):
    """Bad calibration or pipeline configuration."""


_BOUNDS_EPS = 1e-9  # slack for mapped points sitting exactly on the sensor edge


@dataclass(frozen=True)
class Calibration:
    model: str
    fisheye_width: int
    fisheye_height: int
    cx: float
    cy: float
    fov_deg: float
    rect_width: int
    rect_height: int
    rect_focal: float
    fc: float | None = None
    poly: tuple[float, float, float, float] | None = None
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name in ("cx", "cy", "fov_deg", "rect_focal"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("fisheye_width", "fisheye_height", "rect_width", "rect_height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.fc is not None:
            object.__setattr__(self, "fc", float(self.fc))
        if self.poly is not None:
            object.__setattr__(self, "poly", tuple(float(c) for c in self.poly))
        if self.model not in MODELS:
            raise ConfigError(f"unknown camera model {self.model!r}")
        if self.model == "polynomial":
            if self.poly is None:
                raise ConfigError("polynomial model requires poly coefficients")
        elif self.fc is None:
            raise ConfigError(f"{self.model} model requires fc")
        if not (0 <= self.cx <= self.fisheye_width - 1 and 0 <= self.cy <= self.fisheye_height - 1):
            raise ConfigError("principal point outside the fisheye image")
        if self.fov_deg <= 0:
            raise ConfigError("fov_deg must be positive")
        if self.model == "pinhole" and self.fov_deg >= 180:
            raise ConfigError("pinhole model requires fov_deg < 180")
        rot = np.asarray(self.rot, dtype=np.float64)
        if rot.shape != (3, 3) or np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise ConfigError("rot must be a 3x3 orthonormal matrix")
        rot.flags.writeable = False
        object.__setattr__(self, "rot", rot)
        self._check_monotone()

    @property
    def theta_max(self):
        return np.deg2rad(self.fov_deg) / 2.0

    def radius(self, theta):
        """Image radius r(theta) in pixels for off-axis angle theta (radians)."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.model == "equidistant":
            return self.fc * theta
        if self.model == "pinhole":
            return self.fc * np.tan(theta)
        a0, a2, a3, a4 = self.poly
        return a0 + a2 * theta**2 + a3 * theta**3 + a4 * theta**4

    def theta_from_radius(self, r):
        """Inverse of :meth:`radius` on [0, theta_max]; NaN outside its range."""
        r = np.asarray(r, dtype=np.float64)
        if self.model == "equidistant":
            theta = r / self.fc
        elif self.model == "pinhole":
            theta = np.arctan2(r, self.fc)
        else:
            grid = np.linspace(0.0, self.theta_max, 4096)
            theta = np.interp(r, self.radius(grid), grid, left=np.nan, right=np.nan)
            # Newton refinement of the table seed; r'(theta) > 0 by the
            # monotonicity invariant so the iteration is well conditioned.
            a0, a2, a3, a4 = self.poly
            for _ in range(4):
                deriv = 2 * a2 * theta + 3 * a3 * theta**2 + 4 * a4 * theta**3
                with np.errstate(invalid="ignore", divide="ignore"):
                    step = np.where(deriv > 0, (self.radius(theta) - r) / np.where(deriv > 0, deriv, 1.0), 0.0)
                theta = np.clip(theta - step, 0.0, self.theta_max)
        return np.where(theta <= self.theta_max, theta, np.nan)

    def _check_monotone(self):
        grid = np.linspace(0.0, self.theta_max, 4096)
        r = self.radius(grid)
        if np.any(np.diff(r) <= 0):
            raise ConfigError("radial function r(theta) is not monotone increasing on [0, theta_max]")


class MappingTable:
    """Reverse mapping of every rectified pixel, plus 8-connected pair caches.

    ``coords[y, x]`` holds the real fisheye coordinate (s_x, s_y) of rectified
    pixel (x, y), NaN where invalid. ``pair_valid[d]`` marks, per direction in
    :data:`PAIR_DIRECTIONS`, the pixels whose pair (pixel, pixel + d) has both
    endpoints valid.
    """

    def __init__(self, coords, valid):
        coords = np.asarray(coords, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        coords = np.where(valid[:, :, None], coords, np.nan)
        coords.flags.writeable = False
        valid.flags.writeable = False
        self.coords = coords
        self.valid = valid
        self.pair_valid = {}
        h, w = valid.shape
        for dx, dy in PAIR_DIRECTIONS:
            ok = np.zeros((h, w), dtype=bool)
            xs = slice(max(0, -dx), w - max(0, dx))
            xd = slice(max(0, dx), w + min(0, dx) or None)
            ok[: h - dy, xs] = valid[: h - dy, xs] & valid[dy:, xd]
            ok.flags.writeable = False
            self.pair_valid[(dx, dy)] = ok

    @property
    def height(self):
        return self.valid.shape[0]

    @property
    def width(self):
        return self.valid.shape[1]

    @property
    def valid_count(self):
        return int(self.valid.sum())


def rect_rays(cal, xs, ys):
    """Unit rays in the fisheye frame for rectified pixel coordinates."""
    ccx = (cal.rect_width - 1) / 2.0
    ccy = (cal.rect_height - 1) / 2.0
    v = np.stack(
        [
            np.asarray(xs, dtype=np.float64) - ccx,
            np.asarray(ys, dtype=np.float64) - ccy,
            np.full(np.shape(xs), cal.rect_focal, dtype=np.float64),
        ],
        axis=-1,
    )
    v = v @ cal.rot.T
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def project_rays(cal, dirs):
    """Project fisheye-frame rays onto the sensor.

    Returns (coords, valid): coords is (..., 2) with entries (s_x, s_y); a ray
    is invalid when its off-axis angle exceeds half the field of view or the
    projection lands outside the sensor.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    rho = np.hypot(dirs[..., 0], dirs[..., 1])
    theta = np.arctan2(rho, dirs[..., 2])
    r = cal.radius(np.minimum(theta, cal.theta_max))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, r / np.where(rho > 0, rho, 1.0), 0.0)
    # Tolerate float epsilon on the sensor boundary, then clip onto it.
    sx = cal.cx + scale * dirs[..., 0]
    sy = cal.cy + scale * dirs[..., 1]
    valid = (
        (theta <= cal.theta_max)
        & (sx >= -_BOUNDS_EPS)
        & (sx <= cal.fisheye_width - 1 + _BOUNDS_EPS)
        & (sy >= -_BOUNDS_EPS)
        & (sy <= cal.fisheye_height - 1 + _BOUNDS_EPS)
    )
    sx = np.clip(sx, 0.0, cal.fisheye_width - 1)
    sy = np.clip(sy, 0.0, cal.fisheye_height - 1)
    return np.stack([sx, sy], axis=-1), valid


def unproject_fisheye(cal, xs, ys):
    """Back-project fisheye pixel coordinates to unit rays.

    Returns (dirs, valid); invalid where the radius falls outside the field
    of view covered by the radial model.
    """
    dx = np.asarray(xs, dtype=np.float64) - cal.cx
    dy = np.asarray(ys, dtype=np.float64) - cal.cy
    rho = np.hypot(dx, dy)
    theta = cal.theta_from_radius(rho)
    valid = np.isfinite(theta)
    theta = np.where(valid, theta, 0.0)
    with np.errstate(invalid="ignore"):
        u = np.where(rho > 0, dx / np.where(rho > 0, rho, 1.0), 0.0)
        v = np.where(rho > 0, dy / np.where(rho > 0, rho, 1.0), 0.0)
    st = np.sin(theta)
    dirs = np.stack([st * u, st * v, np.cos(theta)], axis=-1)
    return dirs, valid


def map_pixel(cal, ix, iy):
    """Reverse-map one rectified pixel; returns (s_x, s_y) or None if invalid.

    Scalar reference path; :func:`build_mapping_table` is the vectorized
    equivalent used by the pipeline.
    """
    ccx = (cal.rect_width - 1) / 2.0
    ccy = (cal.rect_height - 1) / 2.0
    v = cal.rot @ np.array([ix - ccx, iy - ccy, cal.rect_focal])
    rho = float(np.hypot(v[0], v[1]))
    theta = float(np.arctan2(rho, v[2]))
    if theta > cal.theta_max:
        return None
    if rho == 0.0:
        sx, sy = float(cal.cx), float(cal.cy)
    else:
        r = float(cal.radius(theta))
        sx = cal.cx + r * v[0] / rho
        sy = cal.cy + r * v[1] / rho
    if not (
        -_BOUNDS_EPS <= sx <= cal.fisheye_width - 1 + _BOUNDS_EPS
        and -_BOUNDS_EPS <= sy <= cal.fisheye_height - 1 + _BOUNDS_EPS
    ):
        return None
    sx = min(max(sx, 0.0), cal.fisheye_width - 1.0)
    sy = min(max(sy, 0.0), cal.fisheye_height - 1.0)
    return (sx, sy)


def build_mapping_table(cal):
    """Precompute the reverse mapping for every rectified pixel."""
    ys, xs = np.mgrid[0 : cal.rect_height, 0 : cal.rect_width]
    dirs = rect_rays(cal, xs, ys)
    coords, valid = project_rays(cal, dirs)
    return MappingTable(coords, valid)


def pair_endpoints(l_s, l_t, l_m, l_n):
    """Assign observation endpoints (m, n) to target endpoints (s, t).

    Returns True when the assignment minimizing
    ||l_s - l_m||^2 + ||l_t - l_n||^2 is the swapped one (s<->n, t<->m);
    ties break toward the direct assignment.
    """
    l_s, l_t = np.asarray(l_s, float), np.asarray(l_t, float)
    l_m, l_n = np.asarray(l_m, float), np.asarray(l_n, float)
    direct = np.sum((l_s - l_m) ** 2) + np.sum((l_t - l_n) ** 2)
    swapped = np.sum((l_s - l_n) ** 2) + np.sum((l_t - l_m) ** 2)
    return bool(swapped < direct)


# ---------------------------------------------------------------------------
# Calibration file: UTF-8 text, one `key = value` per line.
# ---------------------------------------------------------------------------

_INT_KEYS = {"fisheye_width", "fisheye_height", "rect_width", "rect_height"}
_FLOAT_KEYS = {"cx", "cy", "fc", "fov_deg", "rect_focal"}


def parse_keyvalue_file(path):
    """Parse a flat `key = value` text file into an ordered dict of strings."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            entries[key] = value
    return entries


def load_calibration(path):
    entries = parse_keyvalue_file(path)
    kwargs = {}
    for key, value in entries.items():
        if key == "model":
            kwargs["model"] = value
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key == "poly":
            parts = [float(p) for p in value.split(",")]
            if len(parts) != 4:
                raise ConfigError(f"poly expects 4 coefficients, got {len(parts)}")
            kwargs["poly"] = tuple(parts)
        elif key == "rot":
            parts = [float(p) for p in value.split(",")]
            if len(parts) != 9:
                raise ConfigError(f"rot expects 9 values, got {len(parts)}")
            kwargs["rot"] = np.array(parts).reshape(3, 3)
        else:
            raise ConfigError(f"unknown calibration key {key!r}")
    try:
        return Calibration(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"incomplete calibration in {path}: {exc}") from exc


def save_calibration(cal, path):
    lines = [
        f"model = {cal.model}",
        f"fisheye_width = {cal.fisheye_width}",
        f"fisheye_height = {cal.fisheye_height}",
        f"cx = {cal.cx!r}",
        f"cy = {cal.cy!r}",
        f"fov_deg = {cal.fov_deg!r}",
        f"rect_width = {cal.rect_width}",
        f"rect_height = {cal.rect_height}",
        f"rect_focal = {cal.rect_focal!r}",
    ]
    if cal.model == "polynomial":
        lines.append("poly = " + ",".join(repr(c) for c in cal.poly))
    else:
        lines.append(f"fc = {cal.fc!r}")
    if np.any(cal.rot != np.eye(3)):
        lines.append("rot = " + ",".join(repr(float(v)) for v in cal.rot.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def make_synthetic_calibration(rect_size=128, model="equidistant", fisheye_scale=2,
                               rect_fov_deg=70.0, fov_deg=160.0):
    """Self-consistent synthetic calibration for procedural test scenes.

    The fisheye sensor is ``fisheye_scale`` times the rectified output and the
    radial model is scaled so the field of view fills ~94% of the half sensor,
    keeping the whole rectified ROI comfortably inside the image.
    """
    fw = fh = rect_size * fisheye_scale
    cx = cy = (fw - 1) / 2.0
    rect_focal = (rect_size / 2.0) / np.tan(np.deg2rad(rect_fov_deg) / 2.0)
    theta_max = np.deg2rad(fov_deg) / 2.0
    r_max = 0.47 * fw
    if model == "equidistant":
        extra = {"fc": r_max / theta_max}
    elif model == "pinhole":
        fov_deg = min(fov_deg, 130.0)
        theta_max = np.deg2rad(fov_deg) / 2.0
        extra = {"fc": r_max / np.tan(theta_max)}
    elif model == "polynomial":
        # Mildly barrel-distorted profile with r(theta_max) = r_max.
        a2 = 0.75 * r_max / theta_max**2
        a3 = 0.25 * r_max / theta_max**3
        extra = {"poly": (0.0, a2, a3, 0.0)}
    else:
        raise ConfigError(f"unknown camera model {model!r}")
    return Calibration(
        model=model,
        fisheye_width=fw,
        fisheye_height=fh,
        cx=cx,
        cy=cy,
        fov_deg=fov_deg,
        rect_width=rect_size,
        rect_height=rect_size,
        rect_focal=rect_focal,
        **extra,
    )


def identity_calibration(size=64):
    """Pinhole-to-pinhole calibration whose reverse mapping is the identity."""
    focal = size * 1.2
    fov = 2.0 * np.rad2deg(np.arctan2(size, focal))  # covers the diagonal
    return Calibration(
        model="pinhole",
        fisheye_width=size,
        fisheye_height=size,
        cx=(size - 1) / 2.0,
        cy=(size - 1) / 2.0,
        fov_deg=fov,
        rect_width=size,
        rect_height=size,
        rect_focal=focal,
        fc=focal,
    )
