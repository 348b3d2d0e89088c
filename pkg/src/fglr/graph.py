"""Similarity-graph construction from Bayer-domain gradient evidence.

For each 8-connected pair of rectified pixels, the inter-pixel gradient is
estimated as a weighted average of raw gradients between adjacent same-color
captured pairs near the mapped segment. Each observation is weighted by a
Gaussian kernel on the product of its squared endpoint distances, the cosine
of the angle between the observation segment and the target segment, and a
cross-channel correlation factor. Edge weights follow from the exponential
kernel w = exp(-grad^2 / sigma_w^2), which keeps the assembled combinatorial
Laplacian positive semi-definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .camera import PAIR_DIRECTIONS

log = logging.getLogger(__name__)

_CHANNELS = ("R", "G", "B")
_MIN_OBS_WEIGHT = 1e-12


@dataclass(frozen=True)
class ChannelCorrelation:
    """Cross-channel gradient correlation factors, clamped to [0, 1].

    Same-channel factors are 1 by definition; the green factors are the
    maximum over the two green CFA phases.
    """

    rho_rb: float
    rho_rg: float
    rho_bg: float

    def factor(self, target, observed):
        if target == observed:
            return 1.0
        pair = frozenset((target, observed))
        if pair == frozenset("RB"):
            return self.rho_rb
        if pair == frozenset("RG"):
            return self.rho_rg
        if pair == frozenset("BG"):
            return self.rho_bg
        raise ValueError(f"unknown channel pair {target!r}, {observed!r}")


@dataclass(frozen=True)
class GradientObservation:
    """One same-color Bayer gradient supporting a rectified pixel pair.

    ``delta`` is oriented along the target segment (the raw difference is
    negated whenever the observation segment had to be flipped to make the
    angle cosine nonnegative).
    """

    delta: float
    weight: float
    m: tuple[int, int]
    n: tuple[int, int]
    cos_theta: float
    channel: str


def _corr2(a, b):
    """2-D Pearson correlation coefficient; 0 when either plane is constant."""
    am = a - a.mean()
    bm = b - b.mean()
    denom = np.sqrt(np.sum(am * am) * np.sum(bm * bm))
    if denom == 0.0:
        return 0.0
    return float(np.sum(am * bm) / denom)


def compute_correlation(patch, layout):
    """Correlation factors from the four sub-planes of an even-sided patch.

    ``patch`` is a 2-D Bayer window whose (0, 0) pixel carries the color
    ``layout`` assigns to (0, 0). The window splits into R, G1, G2 and B
    sub-planes; negative correlations clamp to 0.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] % 2 or patch.shape[1] % 2:
        raise ValueError(f"patch must be 2-D with even sides, got shape {patch.shape}")
    if min(patch.shape) < 4:
        raise ValueError(f"patch sides must be >= 4, got shape {patch.shape}")
    rx, ry = layout.ox % 2, layout.oy % 2
    r = patch[ry::2, rx::2]
    g1 = patch[ry::2, 1 - rx :: 2]
    g2 = patch[1 - ry :: 2, rx::2]
    b = patch[1 - ry :: 2, 1 - rx :: 2]
    clamp = lambda v: float(np.clip(v, 0.0, 1.0))
    return ChannelCorrelation(
        rho_rb=clamp(_corr2(r, b)),
        rho_rg=clamp(max(_corr2(r, g1), _corr2(r, g2))),
        rho_bg=clamp(max(_corr2(b, g1), _corr2(b, g2))),
    )


class BayerPairField:
    """All same-color adjacent captured pairs of one Bayer frame, spatially indexed.

    Red/blue pairs sit at axis-aligned lattice distance 2, green pairs at
    diagonal distance sqrt(2). Pairs are bucketed by the integer cell of their
    midpoint so a Chebyshev-window query around any point is a handful of
    contiguous slices.
    """

    def __init__(self, bayer):
        w, h = bayer.width, bayer.height
        data = bayer.data
        rx, ry = bayer.layout.ox % 2, bayer.layout.oy % 2
        ms, ns, chans = [], [], []

        for chan_id, (px, py) in ((0, (rx, ry)), (2, (1 - rx, 1 - ry))):
            xs = np.arange(px, w, 2)
            ys = np.arange(py, h, 2)
            gx, gy = np.meshgrid(xs, ys)
            for dx, dy in ((2, 0), (0, 2)):
                keep = (gx + dx <= w - 1) & (gy + dy <= h - 1)
                mx, my = gx[keep], gy[keep]
                ms.append(np.stack([mx, my], axis=1))
                ns.append(np.stack([mx + dx, my + dy], axis=1))
                chans.append(np.full(len(mx), chan_id, dtype=np.int8))

        yy, xx = np.mgrid[0:h, 0:w]
        green = (xx + rx + yy + ry) % 2 == 1
        gx, gy = xx[green], yy[green]
        for dx, dy in ((1, 1), (1, -1)):
            keep = (gx + dx <= w - 1) & (gy + dy >= 0) & (gy + dy <= h - 1)
            mx, my = gx[keep], gy[keep]
            ms.append(np.stack([mx, my], axis=1))
            ns.append(np.stack([mx + dx, my + dy], axis=1))
            chans.append(np.full(len(mx), 1, dtype=np.int8))

        m = np.concatenate(ms).astype(np.float64)
        n = np.concatenate(ns).astype(np.float64)
        chan = np.concatenate(chans)
        mid = (m + n) / 2.0
        delta = data[m[:, 1].astype(int), m[:, 0].astype(int)] - data[
            n[:, 1].astype(int), n[:, 0].astype(int)
        ]

        cell = np.floor(mid[:, 1]).astype(np.int64) * w + np.floor(mid[:, 0]).astype(np.int64)
        order = np.argsort(cell, kind="stable")
        self.m, self.n = m[order], n[order]
        self.mid, self.delta, self.chan = mid[order], delta[order], chan[order]
        self.width, self.height = w, h
        counts = np.bincount(cell[order], minlength=w * h)
        self.starts = np.concatenate([[0], np.cumsum(counts)])

    def query(self, points, radius):
        """Indices of pairs whose midpoint lies within Chebyshev ``radius`` of
        each query point; returns (query_index, pair_index) flat arrays."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hw = int(np.ceil(radius))
        span = np.arange(-hw, hw + 1)
        offx, offy = np.meshgrid(span, span)
        cx = np.floor(points[:, 0]).astype(np.int64)[:, None] + offx.ravel()[None, :]
        cy = np.floor(points[:, 1]).astype(np.int64)[:, None] + offy.ravel()[None, :]
        ok = (cx >= 0) & (cx < self.width) & (cy >= 0) & (cy < self.height)
        key = np.where(ok, cy * self.width + cx, 0)
        s = self.starts[key]
        counts = np.where(ok, self.starts[key + 1] - s, 0)

        s, counts = s.ravel(), counts.ravel()
        total = int(counts.sum())
        if total == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        reps = np.repeat(np.arange(len(counts)), counts)
        inner = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        pair_idx = s[reps] + inner
        query_idx = reps // offx.size

        r = radius + 1e-12
        dx = self.mid[pair_idx, 0] - points[query_idx, 0]
        dy = self.mid[pair_idx, 1] - points[query_idx, 1]
        keep = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        return query_idx[keep], pair_idx[keep]


def _observation_values(ls, lt, lm, ln, delta_raw, sigma_v, kernel_mode):
    """Distance kernel, orientation-fixed cosine and oriented delta (Eqs. for v).

    ``ls``/``lt`` are per-row target endpoints, ``lm``/``ln`` the observation
    endpoints; the endpoint assignment minimizing total squared distance is
    applied first, the (m, n) orientation is then flipped (negating delta) so
    the cosine is nonnegative.
    """
    smx, smy = ls[:, 0] - lm[:, 0], ls[:, 1] - lm[:, 1]
    tnx, tny = lt[:, 0] - ln[:, 0], lt[:, 1] - ln[:, 1]
    snx, sny = ls[:, 0] - ln[:, 0], ls[:, 1] - ln[:, 1]
    tmx, tmy = lt[:, 0] - lm[:, 0], lt[:, 1] - lm[:, 1]
    d_sm = smx * smx + smy * smy
    d_tn = tnx * tnx + tny * tny
    d_sn = snx * snx + sny * sny
    d_tm = tmx * tmx + tmy * tmy
    swap = d_sn + d_tm < d_sm + d_tn

    d1sq = np.where(swap, d_sn, d_sm)
    d2sq = np.where(swap, d_tm, d_tn)
    delta = np.where(swap, -delta_raw, delta_raw)

    tx, ty = lt[:, 0] - ls[:, 0], lt[:, 1] - ls[:, 1]
    sign = np.where(swap, -1.0, 1.0)
    ox, oy = sign * (ln[:, 0] - lm[:, 0]), sign * (ln[:, 1] - lm[:, 1])
    denom2 = (tx * tx + ty * ty) * (ox * ox + oy * oy)
    good = denom2 > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(good, (tx * ox + ty * oy) / np.sqrt(np.where(good, denom2, 1.0)), 0.0)
    flipped = swap ^ (cos < 0)  # net (m, n) relabeling
    delta = np.where(cos < 0, -delta, delta)
    cos = np.abs(cos)

    if kernel_mode == "product":
        arg = d1sq * d2sq
    elif kernel_mode == "sum":
        arg = d1sq + d2sq
    else:
        raise ValueError(f"unknown kernel mode {kernel_mode!r}")
    kernel = np.exp(-arg / sigma_v**2)
    return delta, kernel, cos, flipped


def collect_observations(table, bayer, pair, channel, radius, rho, sigma_v,
                         field=None, kernel_mode="product", normalize_delta=False):
    """Gradient observations for the rectified pixel pair ``pair`` = (i, j).

    ``i`` and ``j`` are (x, y) rectified coordinates, both valid in ``table``.
    Enumerates same-color adjacent captured pairs whose midpoint falls within
    Chebyshev ``radius`` of the midpoint of the mapped segment; observations
    with weight <= 1e-12 are dropped.
    """
    (ix, iy), (jx, jy) = pair
    if not (table.valid[iy, ix] and table.valid[jy, jx]):
        raise ValueError(f"pair endpoints must both be valid, got {pair}")
    if field is None:
        field = BayerPairField(bayer)
    ls = table.coords[iy, ix]
    lt = table.coords[jy, jx]
    _, pair_idx = field.query(((ls + lt) / 2.0)[None, :], radius)

    lsr = np.broadcast_to(ls, (len(pair_idx), 2))
    ltr = np.broadcast_to(lt, (len(pair_idx), 2))
    delta, kernel, cos, flipped = _observation_values(
        lsr, ltr, field.m[pair_idx], field.n[pair_idx],
        field.delta[pair_idx], sigma_v, kernel_mode,
    )
    if normalize_delta:
        delta = delta * _delta_scale(ls, lt, field.m[pair_idx], field.n[pair_idx])
    factors = np.array([rho.factor(channel, c) for c in _CHANNELS])
    v = kernel * cos * factors[field.chan[pair_idx]]

    out = []
    for k in np.nonzero(v > _MIN_OBS_WEIGHT)[0]:
        p = pair_idx[k]
        m, n = field.m[p], field.n[p]
        if flipped[k]:
            m, n = n, m
        out.append(
            GradientObservation(
                delta=float(delta[k]),
                weight=float(v[k]),
                m=(int(m[0]), int(m[1])),
                n=(int(n[0]), int(n[1])),
                cos_theta=float(cos[k]),
                channel=_CHANNELS[field.chan[p]],
            )
        )
    return out


def _delta_scale(ls, lt, lm, ln):
    seg = np.linalg.norm(np.asarray(lt) - np.asarray(ls))
    obs = np.linalg.norm(ln - lm, axis=1)
    return seg / obs


def mle_gradient(obs):
    """Weighted average of gradient observations (the closed-form MLE)."""
    if not obs:
        raise ValueError("no observations")
    v = np.array([o.weight for o in obs])
    total = v.sum()
    if total <= 0:
        raise ValueError("observations carry no weight")
    deltas = np.array([o.delta for o in obs])
    return float(np.dot(v, deltas) / total)


def edge_weight(delta, sigma_w):
    """Exponential similarity kernel w = exp(-delta^2 / sigma_w^2) in [0, 1]."""
    if sigma_w <= 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    return float(np.exp(-(delta**2) / sigma_w**2))


class PatchGraph:
    """Weighted graph over patch pixels with its combinatorial Laplacian."""

    def __init__(self, n, edges_i, edges_j, weights):
        self.n = int(n)
        self.edges_i = np.asarray(edges_i, dtype=np.int64)
        self.edges_j = np.asarray(edges_j, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        for arr in (self.edges_i, self.edges_j, self.weights):
            arr.flags.writeable = False
        i, j, w = self.edges_i, self.edges_j, self.weights
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([j, i, i, j])
        vals = np.concatenate([-w, -w, w, w])
        self.laplacian = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(self.n, self.n)
        ).tocsr()

    @property
    def edge_count(self):
        return len(self.weights)

    def quadratic_form(self, x):
        """x^T L x, the graph Laplacian regularizer value."""
        x = np.asarray(x, dtype=np.float64)
        return float(x @ (self.laplacian @ x))


def build_laplacian(n, edges):
    """Assemble a PatchGraph from (i, j, w) triples.

    Weights must lie in [0, 1] and endpoints must differ; a duplicate edge
    (in either orientation) overwrites the earlier one with a warning.
    """
    seen = {}
    for i, j, w in edges:
        i, j, w = int(i), int(j), float(w)
        if i == j:
            raise ValueError(f"self loop at node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) outside graph of {n} nodes")
        if not (0.0 <= w <= 1.0):
            raise ValueError(f"edge weight {w} outside [0, 1]")
        key = (min(i, j), max(i, j))
        if key in seen:
            log.warning("duplicate edge %s: keeping last weight %g", key, w)
        seen[key] = w
    keys = list(seen)
    ei = np.array([k[0] for k in keys], dtype=np.int64)
    ej = np.array([k[1] for k in keys], dtype=np.int64)
    ew = np.array([seen[k] for k in keys])
    return PatchGraph(n, ei, ej, ew)


def dump_edges_csv(graph, path):
    """Debug dump of the edge list as CSV rows (i, j, w)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,w\n")
        for i, j, w in zip(graph.edges_i, graph.edges_j, graph.weights):
            fh.write(f"{i},{j},{w!r}\n")


def rebuild_from_signal(x, topology, sigma_w):
    """Recompute edge weights from the signal over an existing topology."""
    if sigma_w <= 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    x = np.asarray(x, dtype=np.float64)
    diff = x[topology.edges_i] - x[topology.edges_j]
    return PatchGraph(
        topology.n, topology.edges_i, topology.edges_j, np.exp(-(diff**2) / sigma_w**2)
    )


def patch_pairs(table, patch):
    """8-connected pixel pairs of a patch with both endpoints valid.

    Returns (i_local, j_local, ls, lt): local row-major node indices and the
    mapped endpoints of each pair.
    """
    px0, py0, pw, ph = patch
    idx_i, idx_j, ls, lt = [], [], [], []
    local = np.arange(pw * ph).reshape(ph, pw)
    coords = table.coords[py0 : py0 + ph, px0 : px0 + pw]
    for dx, dy in PAIR_DIRECTIONS:
        ok = table.pair_valid[(dx, dy)][py0 : py0 + ph, px0 : px0 + pw].copy()
        # Clip pairs whose neighbor leaves the patch.
        if dx > 0:
            ok[:, pw - dx :] = False
        elif dx < 0:
            ok[:, :-dx] = False
        if dy > 0:
            ok[ph - dy :, :] = False
        ys, xs = np.nonzero(ok)
        idx_i.append(local[ys, xs])
        idx_j.append(local[ys + dy, xs + dx])
        ls.append(coords[ys, xs])
        lt.append(coords[ys + dy, xs + dx])
    return (
        np.concatenate(idx_i),
        np.concatenate(idx_j),
        np.concatenate(ls) if ls else np.empty((0, 2)),
        np.concatenate(lt) if lt else np.empty((0, 2)),
    )


@dataclass(frozen=True)
class PatchObservations:
    """Channel-independent observation geometry of one patch.

    The distance kernel, angle cosine and oriented delta of every candidate
    observation do not depend on which color is being reconstructed, so one
    collection pass serves all three channel solves; only the correlation
    factor and the per-pair accumulation remain per channel.
    """

    idx_i: np.ndarray
    idx_j: np.ndarray
    qidx: np.ndarray
    delta: np.ndarray
    base: np.ndarray
    obs_chan: np.ndarray


def collect_patch_observations(field, table, patch, sigma_v, radius,
                               kernel_mode="product", normalize_delta=False):
    """Gather all candidate observations for every 8-connected patch pair."""
    idx_i, idx_j, ls, lt = patch_pairs(table, patch)
    if len(idx_i) == 0:
        empty = np.empty(0)
        return PatchObservations(idx_i, idx_j, np.empty(0, np.int64), empty, empty,
                                 np.empty(0, np.int8))
    mids = (ls + lt) / 2.0
    qidx, pidx = field.query(mids, radius)
    delta, kernel, cos, _ = _observation_values(
        ls[qidx], lt[qidx], field.m[pidx], field.n[pidx], field.delta[pidx],
        sigma_v, kernel_mode,
    )
    if normalize_delta:
        seg = np.linalg.norm(lt - ls, axis=1)[qidx]
        obs = np.linalg.norm(field.n[pidx] - field.m[pidx], axis=1)
        delta = delta * seg / obs
    return PatchObservations(idx_i, idx_j, qidx, delta, kernel * cos, field.chan[pidx])


def edge_weights_from_observations(obs, channel, rho, sigma_w):
    """Per-channel MLE gradients and edge weights from cached observations.

    Pairs without usable observations fall back to weight 1 (an
    uninformative prior); their count is returned for logging.
    """
    n_pairs = len(obs.idx_i)
    if n_pairs == 0:
        return obs.idx_i, obs.idx_j, np.empty(0), 0
    factors = np.array([rho.factor(channel, c) for c in _CHANNELS])
    v = obs.base * factors[obs.obs_chan]
    keep = v > _MIN_OBS_WEIGHT
    qidx, v, delta = obs.qidx[keep], v[keep], obs.delta[keep]
    total = np.bincount(qidx, weights=v, minlength=n_pairs)
    weighted = np.bincount(qidx, weights=v * delta, minlength=n_pairs)
    has_info = total > 0
    grad = np.where(has_info, weighted / np.where(has_info, total, 1.0), 0.0)
    weights = np.exp(-(grad**2) / sigma_w**2)
    fallbacks = int(np.count_nonzero(~has_info))
    if fallbacks:
        log.debug("%d/%d pairs had no observations; weight fell back to 1", fallbacks, n_pairs)
    return obs.idx_i, obs.idx_j, weights, fallbacks


def patch_edge_weights(field, table, patch, channel, rho, sigma_v, sigma_w, radius,
                       kernel_mode="product", normalize_delta=False):
    """Initial edge weights for one patch and channel in one vectorized pass."""
    obs = collect_patch_observations(field, table, patch, sigma_v, radius,
                                     kernel_mode, normalize_delta)
    return edge_weights_from_observations(obs, channel, rho, sigma_w)
