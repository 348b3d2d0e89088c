"""End-to-end joint reconstruction: tiling, per-patch solves, stitching.

The rectified output is tiled into overlapping patches. Per patch and color
channel the pipeline interpolates a seed estimate Hy, assembles the
gradient-driven similarity graph, then alternates conjugate-gradient solves
of (I + mu L) x = Hy with Laplacian rebuilds from the current solution until
the iteration budget runs out or the solution stops moving. Overlapping
patch outputs are averaged uniformly; pixel values are clamped only at
aggregation so saturation never shifts the fixed point.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import ConfigError, parse_keyvalue_file
from .graph import (
    BayerPairField,
    ChannelCorrelation,
    PatchGraph,
    collect_patch_observations,
    compute_correlation,
    edge_weights_from_observations,
    rebuild_from_signal,
)
from .imgcore import PlanarImage
from .interp import apply_H, build_H, gather_window
from .solver import GlrProblem, SolveResult, objective, solve

log = logging.getLogger(__name__)

_CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters of the joint method; defaults match the multifov preset."""

    patch: int = 32
    stride: int = 28
    mu: float = 1.0
    iterations: int = 5
    sigma_w: tuple[float, float] = (0.01, 0.02)
    sigma_v: float = 1.5
    radius: float = 3.0
    threshold: float = 1e-4
    threads: int = 1
    cg_tol: float = 1e-8
    cg_max_iterations: int = 2000
    kernel_mode: str = "product"
    normalize_delta: bool = False

    def __post_init__(self):
        if not (0 < self.stride <= self.patch):
            raise ConfigError(f"stride must be in (0, patch], got {self.stride}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if min(self.sigma_w) <= 0 or self.sigma_v <= 0:
            raise ConfigError("all sigma parameters must be positive")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


# Parameter presets for the two evaluation regimes: "multifov" suits detailed
# scene content, "inhouse" smooth rendered content (stronger smoothing).
PRESETS = {
    "multifov": PipelineConfig(iterations=5, sigma_w=(0.01, 0.02), sigma_v=1.5),
    "inhouse": PipelineConfig(iterations=8, sigma_w=(0.035, 0.028), sigma_v=6.0),
}


def load_pipeline_config(path, base=None):
    """Read PipelineConfig fields from a `key = value` text file."""
    base = base or PipelineConfig()
    entries = parse_keyvalue_file(path)
    updates = {}
    for key, value in entries.items():
        if key in ("patch", "stride", "iterations", "threads", "cg_max_iterations"):
            updates[key] = int(value)
        elif key in ("mu", "sigma_v", "radius", "threshold", "cg_tol"):
            updates[key] = float(value)
        elif key == "sigma_w":
            parts = [float(p) for p in value.split(",")]
            updates[key] = (parts[0], parts[-1] if len(parts) > 1 else parts[0])
        elif key == "kernel_mode":
            updates[key] = value
        elif key == "normalize_delta":
            updates[key] = value.lower() in ("1", "true", "yes")
        else:
            raise ConfigError(f"unknown pipeline config key {key!r}")
    return replace(base, **updates)


@dataclass(frozen=True)
class PatchResult:
    """Solved channel vectors of one patch, unclamped."""

    origin: tuple[int, int]
    shape: tuple[int, int]
    channels: tuple[np.ndarray, np.ndarray, np.ndarray]
    converged: tuple[bool, bool, bool]
    iterations_used: tuple[int, int, int]


@dataclass(frozen=True)
class IterationRecord:
    """One outer iteration of one patch channel, for audit and acceptance."""

    patch_index: int
    origin: tuple[int, int]
    channel: str
    iteration: int
    objective_solution: float
    objective_seed: float
    cg_converged: bool
    cg_iterations: int


@dataclass(frozen=True)
class ReconstructionResult:
    image: PlanarImage
    records: list[IterationRecord] = field(repr=False, default_factory=list)
    all_converged: bool = True
    fallback_pairs: int = 0


def tile(width, height, patch, stride):
    """Patch rectangles covering the frame; boundary patches shift inward."""
    if patch > width or patch > height:
        raise ValueError(f"patch {patch} exceeds output size {width}x{height}")

    def axis(size):
        starts, pos = [], 0
        while True:
            if pos + patch >= size:
                starts.append(size - patch)
                break
            starts.append(pos)
            pos += stride
        return starts

    return [(x, y, patch, patch) for y in axis(height) for x in axis(width)]


def aggregate(results, width, height, valid):
    """Uniformly average overlapping patch outputs and clamp to [0, 1].

    Invalid pixels render as 0. A valid pixel no patch covered violates the
    tiling contract and raises.
    """
    accum = np.zeros((height, width, 3))
    count = np.zeros((height, width), dtype=np.int64)
    for res in results:
        x0, y0 = res.origin
        pw, ph = res.shape
        for c in range(3):
            accum[y0 : y0 + ph, x0 : x0 + pw, c] += res.channels[c].reshape(ph, pw)
        count[y0 : y0 + ph, x0 : x0 + pw] += 1
    uncovered = (count == 0) & valid
    if uncovered.any():
        raise RuntimeError(f"{uncovered.sum()} valid pixels not covered by any patch")
    out = accum / np.maximum(count, 1)[:, :, None]
    out *= valid[:, :, None]
    return PlanarImage(np.clip(out, 0.0, 1.0))


def _patch_correlation(bayer, window):
    """Correlation factors over the even-aligned crop of the patch window."""
    wx0, wy0, ww, wh = window
    ex0, ey0 = wx0 - wx0 % 2, wy0 - wy0 % 2
    ew, eh = (wx0 + ww - ex0) & ~1, (wy0 + wh - ey0) & ~1
    if ew < 4 or eh < 4:
        log.debug("window %s too small for correlation; using neutral factors", window)
        return ChannelCorrelation(1.0, 1.0, 1.0)
    crop = bayer.data[ey0 : ey0 + eh, ex0 : ex0 + ew]
    return compute_correlation(crop, bayer.layout.shifted(ex0, ey0))


def _solve_patch(patch_index, patch, bayer, table, field, cfg):
    px0, py0, pw, ph = patch
    n = pw * ph
    channels, converged, iters_used, records = [], [], [], []
    fallbacks = 0
    rho = None
    observations = collect_patch_observations(
        field, table, patch, cfg.sigma_v, cfg.radius, cfg.kernel_mode, cfg.normalize_delta
    )
    for channel in _CHANNELS:
        op = build_H(table, bayer, patch, channel)
        if rho is None:
            rho = _patch_correlation(bayer, op.window)
        b = apply_H(op, gather_window(bayer, op.window))

        ei, ej, ws, nfall = edge_weights_from_observations(
            observations, channel, rho, cfg.sigma_w[0]
        )
        fallbacks += nfall
        graph = PatchGraph(n, ei, ej, ws)

        x = b
        prev = None
        ch_converged = True
        solves = 0
        for it in range(cfg.iterations):
            result = solve(
                GlrProblem(b, graph, cfg.mu, cfg.cg_tol, cfg.cg_max_iterations), x0=x
            )
            solves += 1
            ch_converged &= result.converged
            records.append(
                IterationRecord(
                    patch_index=patch_index,
                    origin=(px0, py0),
                    channel=channel,
                    iteration=it,
                    objective_solution=objective(result.x, b, graph, cfg.mu),
                    objective_seed=objective(b, b, graph, cfg.mu),
                    cg_converged=result.converged,
                    cg_iterations=result.iterations,
                )
            )
            x = result.x
            if prev is not None:
                denom = np.linalg.norm(prev)
                change = np.linalg.norm(x - prev) / denom if denom > 0 else 0.0
                if change < cfg.threshold:
                    break
            prev = x
            if it < cfg.iterations - 1:
                graph = rebuild_from_signal(x, graph, cfg.sigma_w[1])
        channels.append(x)
        converged.append(ch_converged)
        iters_used.append(solves)
    result = PatchResult(
        origin=(px0, py0),
        shape=(pw, ph),
        channels=tuple(channels),
        converged=tuple(converged),
        iterations_used=tuple(iters_used),
    )
    return result, records, fallbacks


def reconstruct(bayer, table, cfg=PipelineConfig()):
    """Run the joint method over the whole frame.

    Patch-channel tasks are independent and read-only over shared inputs;
    results are reduced in patch order, so the output is bit-identical for
    any thread count.
    """
    if not table.valid.any():
        raise ValueError("mapping table has no valid pixels")
    field = BayerPairField(bayer)
    patches = tile(table.width, table.height, cfg.patch, cfg.stride)
    kept = [
        (idx, p)
        for idx, p in enumerate(patches)
        if table.valid[p[1] : p[1] + p[3], p[0] : p[0] + p[2]].any()
    ]
    if len(kept) < len(patches):
        log.info("skipping %d patches with no valid pixels", len(patches) - len(kept))

    def work(item):
        idx, patch = item
        return _solve_patch(idx, patch, bayer, table, field, cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(work, kept))
    else:
        outputs = [work(item) for item in kept]

    results = [out[0] for out in outputs]
    records = [rec for out in outputs for rec in out[1]]
    fallbacks = sum(out[2] for out in outputs)
    image = aggregate(results, table.width, table.height, table.valid)
    all_converged = all(all(res.converged) for res in results)
    if not all_converged:
        log.warning("conjugate gradient failed to converge in at least one patch")
    return ReconstructionResult(image, records, all_converged, fallbacks)
