"""Front-to-back splat rasterization of color, features, depth and alpha.

Each pixel composites the Gaussians whose 3-sigma ellipse covers its
center, nearest first (ties by primitive index).  A primitive's
contribution is ``w = opacity * min(g, 0.99) * T`` with ``g`` the 2D
Gaussian falloff and ``T`` the transmittance left by the primitives in
front of it; compositing stops once ``T`` drops below ``1e-4``.  Color,
features and depth all use the same weights.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import CameraView
from .scene import GaussianScene, GaussianPrimitive, eval_sh

log = logging.getLogger(__name__)

NEAR_PLANE = 0.01
LOW_PASS = 0.3
FALLOFF_CLAMP = 0.99
T_MIN = 1e-4
SIGMA_CUTOFF = 3.0
DET_MIN = 1e-12
# bound on (pixel, primitive) candidates materialized at once
_PAIR_BUDGET = 1 << 20
# log-transmittance slack below the cutoff before pairs are dropped
_PRUNE_MARGIN = 5.0


@dataclass
class Projection:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass
class RenderOutput:
    color: np.ndarray
    feature: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    transmittance: np.ndarray
    n_singular: int = 0
    n_visible: int = 0


def _ewa(view: CameraView, centers, covariances):
    """Camera-frame means, screen means and low-passed 2D covariances."""
    R = view.rotation
    cam = centers @ R.T + view.translation
    z = cam[:, 2]
    safe_z = np.where(z > NEAR_PLANE, z, 1.0)
    x, y = cam[:, 0], cam[:, 1]
    mean2d = np.stack([view.fx * x / safe_z + view.cx, view.fy * y / safe_z + view.cy], axis=1)
    n = len(centers)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = view.fx / safe_z
    J[:, 0, 2] = -view.fx * x / safe_z ** 2
    J[:, 1, 1] = view.fy / safe_z
    J[:, 1, 2] = -view.fy * y / safe_z ** 2
    M = J @ R
    cov2d = M @ covariances @ M.transpose(0, 2, 1)
    cov2d = 0.5 * (cov2d + cov2d.transpose(0, 2, 1))
    cov2d[:, 0, 0] += LOW_PASS
    cov2d[:, 1, 1] += LOW_PASS
    return mean2d, cov2d, z


def _on_screen(view, mean2d, cov2d, z):
    rx = SIGMA_CUTOFF * np.sqrt(np.maximum(cov2d[:, 0, 0], 0.0))
    ry = SIGMA_CUTOFF * np.sqrt(np.maximum(cov2d[:, 1, 1], 0.0))
    return ((z > NEAR_PLANE)
            & (mean2d[:, 0] + rx > 0) & (mean2d[:, 0] - rx < view.width)
            & (mean2d[:, 1] + ry > 0) & (mean2d[:, 1] - ry < view.height))


def project_gaussian_2d(view: CameraView, primitive: GaussianPrimitive):
    """EWA projection of a single primitive; ``None`` when it is culled."""
    mean2d, cov2d, z = _ewa(view, np.asarray(primitive.center, dtype=np.float64).reshape(1, 3),
                            np.asarray(primitive.covariance, dtype=np.float64).reshape(1, 3, 3))
    if not _on_screen(view, mean2d, cov2d, z)[0]:
        return None
    return Projection(mean2d[0], cov2d[0], float(z[0]))


def _bboxes(view, mean2d, cov2d):
    """Inclusive pixel ranges ``(u0, u1, v0, v1)`` of each 3-sigma bounding box (empty when u1 < u0)."""
    W, H = view.width, view.height
    rx = SIGMA_CUTOFF * np.sqrt(cov2d[:, 0, 0])
    ry = SIGMA_CUTOFF * np.sqrt(cov2d[:, 1, 1])
    u0 = np.clip(np.ceil(mean2d[:, 0] - rx - 0.5), 0, W).astype(np.int64)
    u1 = np.clip(np.floor(mean2d[:, 0] + rx - 0.5), -1, W - 1).astype(np.int64)
    v0 = np.clip(np.ceil(mean2d[:, 1] - ry - 0.5), 0, H).astype(np.int64)
    v1 = np.clip(np.floor(mean2d[:, 1] + ry - 0.5), -1, H - 1).astype(np.int64)
    return u0, u1, v0, v1


def _pixel_pairs(view, mean2d, cov2d, box):
    """Expand projected Gaussians to (pixel, primitive) pairs inside the 3-sigma ellipse.

    Returns flat pixel ids, row indices into ``mean2d`` (ascending) and the
    falloff ``g``.
    """
    W = view.width
    u0, u1, v0, v1 = box
    nx = np.maximum(u1 - u0 + 1, 0)
    ny = np.maximum(v1 - v0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    inv00 = cov2d[:, 1, 1] / det
    inv11 = cov2d[:, 0, 0] / det
    inv01 = -cov2d[:, 0, 1] / det
    prim = np.repeat(np.arange(len(counts)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nxp = nx[prim]
    uu = u0[prim] + offsets % nxp
    vv = v0[prim] + offsets // nxp
    dx = uu + 0.5 - mean2d[prim, 0]
    dy = vv + 0.5 - mean2d[prim, 1]
    power = inv00[prim] * dx * dx + 2.0 * inv01[prim] * dx * dy + inv11[prim] * dy * dy
    keep = power <= SIGMA_CUTOFF ** 2
    return (vv * W + uu)[keep], prim[keep], np.exp(-0.5 * power[keep])


class _Accumulator:
    """Per-pixel compositing state shared by successive depth-ordered chunks."""

    def __init__(self, n_pix, n_color, n_feat):
        self.T = np.ones(n_pix)
        self.w = np.zeros(n_pix)
        self.color = np.zeros((n_pix, n_color))
        self.feature = np.zeros((n_pix, n_feat))
        self.depth = np.zeros(n_pix)

    def composite(self, pix, prim, alpha, color, feature, depth):
        """Front-to-back blend of pairs sorted by (pixel, depth rank).

        Each pixel's arithmetic depends only on its own pairs, taken in
        order, so splitting the pixels across calls never changes a result.
        """
        if len(pix) == 0:
            return
        starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
        lengths = np.diff(np.r_[starts, len(pix)])
        rank = np.arange(len(pix)) - np.repeat(starts, lengths)
        layer_order = np.argsort(rank, kind="stable")
        bounds = np.searchsorted(rank[layer_order], np.arange(lengths.max() + 1))
        T = self.T
        for k in range(len(bounds) - 1):
            sel = layer_order[bounds[k]:bounds[k + 1]]
            p = pix[sel]
            a = alpha[sel]
            s = prim[sel]
            Tb = T[p]
            live = Tb >= T_MIN
            w = np.where(live, Tb * a, 0.0)
            T[p] = np.where(live, Tb * (1.0 - a), Tb)
            self.w[p] += w
            self.color[p] += w[:, None] * color[s]
            self.feature[p] += w[:, None] * feature[s]
            self.depth[p] += w * depth[s]


def _prune_saturated(pix, alpha, T_start):
    """Mask of pairs that may still see transmittance >= T_MIN.

    Uses a log-space running sum as a conservative estimate; dropped pairs
    sit orders of magnitude past the cutoff and would get zero weight in
    the exact pass anyway, so the result is unchanged.
    """
    if len(pix) == 0:
        return np.zeros(0, dtype=bool)
    starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
    lengths = np.diff(np.r_[starts, len(pix)])
    la = np.log1p(-alpha)
    excl = np.cumsum(la) - la
    log_T = excl - np.repeat(excl[starts], lengths) + np.log(T_start[pix])
    return log_T > np.log(T_MIN) - _PRUNE_MARGIN


def _live_in_box(live, box):
    """Whether each bounding box contains at least one unsaturated pixel (summed-area table)."""
    u0, u1, v0, v1 = box
    sat = np.zeros((live.shape[0] + 1, live.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = np.cumsum(np.cumsum(live, axis=0), axis=1)
    nonempty = (u1 >= u0) & (v1 >= v0)
    a0, a1 = np.clip(u0, 0, live.shape[1]), np.clip(u1 + 1, 0, live.shape[1])
    b0, b1 = np.clip(v0, 0, live.shape[0]), np.clip(v1 + 1, 0, live.shape[0])
    count = sat[b1, a1] - sat[b0, a1] - sat[b1, a0] + sat[b0, a0]
    return nonempty & (count > 0)


def render(scene: GaussianScene, view: CameraView, background=(0.0, 0.0, 0.0), threads: int = 1) -> RenderOutput:
    """Render color, feature, expected depth and alpha maps of ``scene`` from ``view``.

    Primitives are processed front to back in chunks; pixels that have
    already saturated are skipped.  ``threads > 1`` composites horizontal
    image bands concurrently.  Every pixel is still computed by the same
    sequential arithmetic, so all settings give bit-identical output.
    """
    H, W = view.height, view.width
    D = scene.feature_dim
    background = np.asarray(background, dtype=np.float64).reshape(3)

    mean2d, cov2d, z = _ewa(view, scene.centers, scene.covariances)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    # not positive definite (possible only for non-PSD input covariances)
    singular = ~(det >= DET_MIN) | ~(cov2d[:, 0, 0] > 0)
    if singular.any():
        log.debug("skipping %d primitives with singular 2D covariance", int(singular.sum()))
    visible = _on_screen(view, mean2d, cov2d, z) & ~singular
    idx = np.flatnonzero(visible)
    # front to back, ties by scene index
    idx = idx[np.lexsort((idx, z[idx]))]

    dirs = scene.centers[idx] - view.center
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    colors = eval_sh(scene.sh[idx], dirs, scene.sh_degree)
    features = scene.features[idx]
    depths = z[idx]
    opacities = scene.opacities[idx]
    mean2d, cov2d = mean2d[idx], cov2d[idx]
    box = _bboxes(view, mean2d, cov2d)
    box_area = np.maximum(box[1] - box[0] + 1, 0) * np.maximum(box[3] - box[2] + 1, 0)
    csum = np.cumsum(box_area)

    n_pix = H * W
    acc = _Accumulator(n_pix, 3, D)
    bands = max(1, min(int(threads), H))
    edges = np.linspace(0, H, bands + 1).round().astype(np.int64)
    pool = ThreadPoolExecutor(max_workers=bands) if bands > 1 else None
    try:
        start = 0
        while start < len(idx):
            base = csum[start - 1] if start else 0
            stop = max(start + 1, int(np.searchsorted(csum, base + _PAIR_BUDGET, side="right")))
            chunk = np.arange(start, stop)
            start = stop
            live = (acc.T >= T_MIN).reshape(H, W)
            chunk = chunk[_live_in_box(live, tuple(b[chunk] for b in box))]
            if len(chunk) == 0:
                continue
            pix, local, g = _pixel_pairs(view, mean2d[chunk], cov2d[chunk], tuple(b[chunk] for b in box))
            prim = chunk[local]
            alpha = opacities[prim] * np.minimum(g, FALLOFF_CLAMP)
            keep = acc.T[pix] >= T_MIN
            pix, prim, alpha = pix[keep], prim[keep], alpha[keep]
            # chunk rows are already in depth order, so prim ascending == depth rank
            order = np.argsort(pix * len(idx) + prim, kind="stable")
            pix, prim, alpha = pix[order], prim[order], alpha[order]
            keep = _prune_saturated(pix, alpha, acc.T)
            pix, prim, alpha = pix[keep], prim[keep], alpha[keep]
            if pool is None:
                acc.composite(pix, prim, alpha, colors, features, depths)
            else:
                cuts = np.searchsorted(pix, edges * W)
                jobs = [pool.submit(acc.composite, pix[cuts[b]:cuts[b + 1]], prim[cuts[b]:cuts[b + 1]],
                                    alpha[cuts[b]:cuts[b + 1]], colors, features, depths)
                        for b in range(bands)]
                for job in jobs:
                    job.result()
    finally:
        if pool is not None:
            pool.shutdown()

    color = acc.color + acc.T[:, None] * background
    return RenderOutput(
        color=color.reshape(H, W, 3),
        feature=acc.feature.reshape(H, W, D),
        depth=acc.depth.reshape(H, W, 1),
        alpha=acc.w.reshape(H, W, 1),
        transmittance=acc.T.reshape(H, W, 1),
        n_singular=int(singular.sum()),
        n_visible=int(len(idx)),
    )


def render_feature_pca_preview(feature):
    """Map an ``(H, W, D)`` feature map to RGB via its top three principal components.

    Each component is min-max scaled to [0, 1]; component signs are fixed
    so that the largest-magnitude loading is positive.  A map with zero
    variance comes back mid-gray.
    """
    feature = np.asarray(feature, dtype=np.float64)
    H, W, D = feature.shape
    X = feature.reshape(-1, D)
    X = X - X.mean(axis=0)
    cov = X.T @ X / max(len(X), 1)
    if not np.any(cov):
        return np.full((H, W, 3), 0.5)
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, ::-1][:, :3]
    if top.shape[1] < 3:
        top = np.pad(top, ((0, 0), (0, 3 - top.shape[1])))
    lead = np.argmax(np.abs(top), axis=0)
    top = top * np.where(top[lead, np.arange(3)] < 0, -1.0, 1.0)
    proj = X @ top
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = hi - lo
    out = np.where(span > 0, (proj - lo) / np.where(span > 0, span, 1.0), 0.5)
    return out.reshape(H, W, 3)
