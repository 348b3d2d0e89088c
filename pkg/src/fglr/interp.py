"""Sparse interpolation operator from a Bayer neighborhood to a rectified patch.

For a rectified patch and one color channel, ``build_H`` assembles the sparse
matrix H whose product with the flattened Bayer window estimates the patch:
red/blue rows carry bilinear weights over the 4 surrounding same-color lattice
sites (lattice spacing 2), green rows carry inverse-distance-squared weights
over the 4 nearest sites of the green quincunx. Rows sum to 1 for valid
pixels, so constants pass through exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse

_MARGIN = 2  # Bayer-pixel dilation of the mapped bounding box


@dataclass(frozen=True)
class InterpOperator:
    """N x M interpolation weights plus the Bayer window they index.

    ``window`` is (x0, y0, width, height) on the Bayer grid; column k of
    ``matrix`` addresses the window pixel (x0 + k % width, y0 + k // width).
    """

    channel: str
    window: tuple[int, int, int, int]
    matrix: scipy.sparse.csr_matrix

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def entries(self):
        """Sparse entries as (row, col, weight) arrays."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def dump_matrix_market(self, path):
        """Debug dump in Matrix Market coordinate format."""
        scipy.io.mmwrite(str(path), self.matrix.tocoo())


def gather_window(bayer, window):
    """Flattened (row-major) Bayer samples of ``window`` = (x0, y0, w, h)."""
    x0, y0, w, h = window
    return bayer.data[y0 : y0 + h, x0 : x0 + w].ravel()


def apply_H(op, y):
    """Sparse matrix-vector product Hy."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.cols,):
        raise ValueError(f"dimension mismatch: H is {op.matrix.shape}, y has shape {y.shape}")
    return op.matrix @ y


def build_H(table, bayer, patch, channel):
    """Build the interpolation operator for one patch and channel.

    ``patch`` is (x0, y0, w, h) on the rectified grid. The Bayer window is the
    bounding box of the mapped locations of valid patch pixels dilated by 2
    pixels and clipped to the sensor. Rows of invalid pixels are zero; a
    mapped location whose 4 interpolation sites are not all in-bounds falls
    back to its nearest in-bounds same-color sample with weight 1.
    """
    px0, py0, pw, ph = patch
    n = pw * ph
    coords = table.coords[py0 : py0 + ph, px0 : px0 + pw].reshape(n, 2)
    valid = table.valid[py0 : py0 + ph, px0 : px0 + pw].reshape(n)
    bw, bh = bayer.width, bayer.height

    if not valid.any():
        empty = scipy.sparse.csr_matrix((n, 0))
        return InterpOperator(channel, (0, 0, 0, 0), empty)

    sx, sy = coords[valid, 0], coords[valid, 1]
    wx0 = max(0, int(np.floor(sx.min())) - _MARGIN)
    wy0 = max(0, int(np.floor(sy.min())) - _MARGIN)
    wx1 = min(bw - 1, int(np.ceil(sx.max())) + _MARGIN)
    wy1 = min(bh - 1, int(np.ceil(sy.max())) + _MARGIN)
    window = (wx0, wy0, wx1 - wx0 + 1, wy1 - wy0 + 1)

    rows_v = np.nonzero(valid)[0]
    if channel == "G":
        rows, cols_xy, weights = _green_weights(sx, sy, rows_v, bayer)
    else:
        rows, cols_xy, weights = _redblue_weights(sx, sy, rows_v, bayer, channel)

    cols = (cols_xy[1] - wy0) * window[2] + (cols_xy[0] - wx0)
    m = window[2] * window[3]
    matrix = scipy.sparse.coo_matrix((weights, (rows, cols)), shape=(n, m)).tocsr()
    matrix.eliminate_zeros()
    return InterpOperator(channel, window, matrix)


def _redblue_weights(sx, sy, rows_v, bayer, channel):
    """Bilinear weights on the spacing-2 sub-lattice of R or B sites."""
    ox, oy = bayer.layout.ox % 2, bayer.layout.oy % 2
    rx = ox if channel == "R" else (ox + 1) % 2
    ry = oy if channel == "R" else (oy + 1) % 2
    gx = np.floor((sx - rx) / 2.0).astype(np.int64)
    gy = np.floor((sy - ry) / 2.0).astype(np.int64)
    u = (sx - rx) / 2.0 - gx
    v = (sy - ry) / 2.0 - gy
    x1, x2 = rx + 2 * gx, rx + 2 * gx + 2
    y1, y2 = ry + 2 * gy, ry + 2 * gy + 2

    site_x = np.stack([x1, x2, x1, x2], axis=1)
    site_y = np.stack([y1, y1, y2, y2], axis=1)
    weights = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=1)
    return _resolve_sites(site_x, site_y, weights, sx, sy, rows_v, bayer, channel)


def _green_weights(sx, sy, rows_v, bayer):
    """Inverse-distance-squared weights over the 4 nearest green sites."""
    ox, oy = bayer.layout.ox % 2, bayer.layout.oy % 2
    bx = np.floor(sx).astype(np.int64)
    by = np.floor(sy).astype(np.int64)
    # Candidate sites in row-major (y, x) order so a stable sort on distance
    # breaks ties deterministically toward smaller (y, x).
    offs = np.array([(dx, dy) for dy in range(-2, 4) for dx in range(-2, 4)])
    cand_x = bx[:, None] + offs[None, :, 0]
    cand_y = by[:, None] + offs[None, :, 1]
    green = (cand_x + ox + cand_y + oy) % 2 == 1
    d2 = (cand_x - sx[:, None]) ** 2 + (cand_y - sy[:, None]) ** 2
    d2 = np.where(green, d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :4]
    take = np.arange(len(sx))[:, None]
    site_x, site_y, d2 = cand_x[take, order], cand_y[take, order], d2[take, order]

    exact = d2[:, 0] < 1e-24
    with np.errstate(divide="ignore"):
        weights = 1.0 / np.where(d2 > 0, d2, 1.0)
    weights[exact] = 0.0
    weights[exact, 0] = 1.0
    weights /= weights.sum(axis=1, keepdims=True)
    return _resolve_sites(site_x, site_y, weights, sx, sy, rows_v, bayer, "G")


def _resolve_sites(site_x, site_y, weights, sx, sy, rows_v, bayer, channel):
    """Keep full stencils whose 4 sites are in-bounds; others fall back to the
    nearest in-bounds same-color sample with weight 1."""
    in_bounds = (
        (site_x >= 0) & (site_x <= bayer.width - 1) & (site_y >= 0) & (site_y <= bayer.height - 1)
    )
    full = in_bounds.all(axis=1)

    rows = np.repeat(rows_v[full], 4)
    out_x = site_x[full].ravel()
    out_y = site_y[full].ravel()
    out_w = weights[full].ravel()

    fb_rows, fb_x, fb_y = [], [], []
    for k in np.nonzero(~full)[0]:
        bx, by = _nearest_same_color(sx[k], sy[k], bayer, channel)
        if bx is None:
            continue  # no reachable sample: leave the row zero
        fb_rows.append(rows_v[k])
        fb_x.append(bx)
        fb_y.append(by)
    if fb_rows:
        rows = np.concatenate([rows, np.asarray(fb_rows, dtype=np.int64)])
        out_x = np.concatenate([out_x, np.asarray(fb_x, dtype=np.int64)])
        out_y = np.concatenate([out_y, np.asarray(fb_y, dtype=np.int64)])
        out_w = np.concatenate([out_w, np.ones(len(fb_rows))])
    return rows, (out_x, out_y), out_w


def _nearest_same_color(sx, sy, bayer, channel):
    """Nearest in-bounds site of ``channel``; ties break toward smaller (y, x)."""
    best = None
    for dy in range(-3, 4):
        for dx in range(-3, 4):
            x = int(np.floor(sx)) + dx
            y = int(np.floor(sy)) + dy
            if not (0 <= x <= bayer.width - 1 and 0 <= y <= bayer.height - 1):
                continue
            if bayer.layout.color_at(x, y) != channel:
                continue
            d2 = (x - sx) ** 2 + (y - sy) ** 2
            key = (d2, y, x)
            if best is None or key < best:
                best = key
    if best is None:
        return None, None
    return best[2], best[1]
