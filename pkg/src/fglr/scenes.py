"""Procedural test scenes rendered analytically on camera rays.

Each scene is a deterministic function of ray direction, so the rectified
ground truth and the fisheye capture are exact point samples of the same
latent scene and no resampling step pollutes either. Directions are reduced
to the gnomonic plane (x/z, y/z) or to per-axis view angles, keeping scene
values well-defined across the whole fisheye field of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import build_mapping_table, rect_rays, unproject_fisheye
from .imgcore import BayerImage, CFALayout, PlanarImage, add_noise, mosaic

SCENE_KINDS = ("constant", "checker", "ramp", "texture", "edges")


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; choose from {SCENE_KINDS}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _angles(dirs):
    """Per-axis view angles (atan2 of x/z and y/z), finite for any direction."""
    a = np.arctan2(dirs[..., 0], dirs[..., 2])
    b = np.arctan2(dirs[..., 1], dirs[..., 2])
    return a, b


def _gnomonic(dirs):
    z = np.maximum(dirs[..., 2], 1e-9)
    return dirs[..., 0] / z, dirs[..., 1] / z


def scene_function(spec):
    """Build the deterministic ray -> RGB function for a scene spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "constant":
        color = rng.uniform(0.25, 0.75, size=3)

        def fn(dirs):
            return np.broadcast_to(color, dirs.shape[:-1] + (3,)).copy()

    elif spec.kind == "checker":
        color_a = rng.uniform(0.1, 0.9, size=3)
        color_b = rng.uniform(0.1, 0.9, size=3)

        def fn(dirs):
            a, b = _angles(dirs)
            parity = (np.floor(a * spec.scale) + np.floor(b * spec.scale)) % 2
            return np.where(parity[..., None] == 0, color_a, color_b)

    elif spec.kind == "ramp":
        # Linear in the gnomonic plane; gains small enough that a moderate
        # rectified field of view never clips.
        gains = rng.uniform(-0.35, 0.35, size=(3, 2))

        def fn(dirs):
            px, py = _gnomonic(dirs)
            vals = 0.5 + gains[:, 0] * px[..., None] + gains[:, 1] * py[..., None]
            return np.clip(vals, 0.0, 1.0)

    elif spec.kind == "texture":
        waves = 4
        amp = rng.uniform(0.05, 0.18, size=(3, waves))
        freq = rng.uniform(0.8, 2.2, size=(3, waves, 2)) * spec.scale
        phase = rng.uniform(0.0, 2 * np.pi, size=(3, waves))

        def fn(dirs):
            a, b = _angles(dirs)
            arg = (
                freq[None, :, :, 0] * a[..., None, None]
                + freq[None, :, :, 1] * b[..., None, None]
                + phase
            )
            vals = 0.5 + np.sum(amp * np.sin(arg), axis=-1)
            return np.clip(vals, 0.0, 1.0)

    else:  # edges: Voronoi cells with flat colors
        sites = rng.uniform(-1.2, 1.2, size=(10, 2))
        palette = rng.uniform(0.1, 0.9, size=(10, 3))

        def fn(dirs):
            a, b = _angles(dirs)
            pts = np.stack([a * spec.scale / 2.0, b * spec.scale / 2.0], axis=-1)
            d2 = np.sum((pts[..., None, :] - sites) ** 2, axis=-1)
            return palette[np.argmin(d2, axis=-1)]

    return fn


def render_scene(spec, cal):
    """Render (rectified ground truth, fisheye capture) for one scene.

    Both images sample the same latent scene at their own pixel rays; fisheye
    pixels beyond the field of view render black.
    """
    fn = scene_function(spec)

    ys, xs = np.mgrid[0 : cal.rect_height, 0 : cal.rect_width]
    reference = PlanarImage(fn(rect_rays(cal, xs, ys)))

    ys, xs = np.mgrid[0 : cal.fisheye_height, 0 : cal.fisheye_width]
    dirs, valid = unproject_fisheye(cal, xs, ys)
    fisheye = fn(dirs) * valid[:, :, None]
    return reference, PlanarImage(fisheye)


def make_case(spec, cal, noise, layout=CFALayout(), table=None):
    """Build one evaluation case: noisy Bayer input, reference, validity mask."""
    reference, fisheye = render_scene(spec, cal)
    bayer = add_noise(mosaic(fisheye, layout), noise)
    if table is None:
        table = build_mapping_table(cal)
    return bayer, reference, table.valid
