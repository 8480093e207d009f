"""Geometry-guided feature warping loss.

Target pixels are lifted with the target depth, moved into the context
camera and re-projected; context features are bilinearly sampled there
and compared with the target features by cosine distance.  Pixels count
only when the sample is in bounds and the re-projected depth agrees with
the context depth map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cosine import cosine_distance, cosine_distance_grad
from .errors import EmptyPairSet, NonPositiveTolerance, ShapeMismatch
from .geometry import (CameraView, as_depth_map, backproject, bilinear_taps, grid_sample_bilinear, pixel_centers,
                       project_points, relative_pose)

DEFAULT_DEPTH_TOL = 0.05


@dataclass
class WarpMask:
    valid: np.ndarray
    in_bounds_count: int
    depth_consistent_count: int


@dataclass
class WarpLossResult:
    loss: float
    mask: WarpMask
    grad_target_features: np.ndarray
    grad_context_features: np.ndarray


@dataclass
class ViewBundle:
    """Everything the warp loss needs from one view."""

    view: CameraView
    features: np.ndarray
    depth: np.ndarray
    name: str = ""


@dataclass
class PairTerm:
    target: str
    context: str
    loss: float
    valid_px: int


@dataclass
class WarpTotal:
    loss: float
    per_pair: list = field(default_factory=list)


def warp_coordinates(target: CameraView, context: CameraView, target_depth):
    """Where each target pixel center lands in the context image.

    Returns ``(coords, projected_depth, valid_depth_input)``: ``(H, W, 2)``
    context pixel coordinates, the context-camera depth of each lifted
    point, and a mask of pixels with positive input and projected depth.
    """
    depth = as_depth_map(target_depth, target)[..., 0]
    h, w = depth.shape
    R, T = relative_pose(target, context)
    pts_t = backproject(target, pixel_centers(h, w), depth)
    pts_c = pts_t @ R.T + T
    coords, z, in_front = project_points(context, pts_c)
    valid = (depth > 0) & in_front
    return coords, z, valid


@dataclass
class WarpGeometry:
    """Feature-independent part of a directed warp: where and whether to sample.

    ``coords`` holds the context coordinates of the valid target pixels in
    row-major order; ``rows``/``cols``/``weights`` are their bilinear taps.
    """

    mask: WarpMask
    coords: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    context_shape: tuple


def warp_geometry(target_view: CameraView, context_view: CameraView, target_depth, context_depth,
                  depth_tol: float = DEFAULT_DEPTH_TOL) -> WarpGeometry:
    """Valid mask and sampling taps for warping ``context`` features onto ``target``."""
    if not depth_tol > 0:
        raise NonPositiveTolerance(f"depth_tol must be positive, got {depth_tol}")
    d_c = as_depth_map(context_depth, context_view)
    coords, proj_z, depth_ok = warp_coordinates(target_view, context_view, target_depth)
    hc, wc = context_view.height, context_view.width
    _, _, _, in_bounds = bilinear_taps(coords, hc, wc)
    in_bounds &= depth_ok
    sampled_depth, _ = grid_sample_bilinear(d_c, coords)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.abs(proj_z - sampled_depth[..., 0]) / proj_z
    valid = in_bounds & (rel < depth_tol)
    mask = WarpMask(valid, int(in_bounds.sum()), int(valid.sum()))
    rows, cols, weights, _ = bilinear_taps(coords[valid], hc, wc)
    return WarpGeometry(mask, coords[valid], rows, cols, weights, (hc, wc))


def masked_cosine_loss(geom: WarpGeometry, target_features, context_features, with_grad=True):
    """Mean cosine distance over the valid pixels of ``geom`` and its feature gradients.

    Returns ``(loss, grad_target, grad_context)``; everything is zero when
    no pixel is valid.  With ``with_grad=False`` only the loss is returned.
    """
    f_t = np.asarray(target_features, dtype=np.float64)
    f_c = np.asarray(context_features, dtype=np.float64)
    n_valid = geom.mask.depth_consistent_count
    if n_valid == 0:
        return 0.0 if not with_grad else (0.0, np.zeros_like(f_t), np.zeros_like(f_c))
    hc, wc = geom.context_shape
    warped = np.einsum("nk,nkc->nc", geom.weights, f_c[geom.rows, geom.cols])
    if not with_grad:
        return float(cosine_distance(f_t[geom.mask.valid], warped).sum() / n_valid)
    grad_t = np.zeros_like(f_t)
    dist, g_a, g_b = cosine_distance_grad(f_t[geom.mask.valid], warped)
    grad_t[geom.mask.valid] = g_a / n_valid
    grad_c = np.zeros((hc * wc, f_c.shape[2]))
    flat = (geom.rows * wc + geom.cols).reshape(-1)
    contrib = (geom.weights[..., None] * (g_b / n_valid)[:, None, :]).reshape(-1, f_c.shape[2])
    np.add.at(grad_c, flat, contrib)
    return float(dist.sum() / n_valid), grad_t, grad_c.reshape(f_c.shape)


def _check_features(target_view, context_view, f_t, f_c):
    if f_t.ndim != 3 or f_c.ndim != 3 or f_t.shape[2] != f_c.shape[2]:
        raise ShapeMismatch(f"feature maps must be (H, W, D) with equal D, got {f_t.shape} and {f_c.shape}")
    if f_t.shape[:2] != (target_view.height, target_view.width):
        raise ShapeMismatch("target features do not match the target camera size")
    if f_c.shape[:2] != (context_view.height, context_view.width):
        raise ShapeMismatch("context features do not match the context camera size")


def warp_distance(target_view: CameraView, context_view: CameraView, target_features, context_features,
                  target_depth, context_depth, depth_tol: float = DEFAULT_DEPTH_TOL) -> WarpLossResult:
    """Masked mean cosine distance between target features and warped context features."""
    if not depth_tol > 0:
        raise NonPositiveTolerance(f"depth_tol must be positive, got {depth_tol}")
    f_t = np.asarray(target_features, dtype=np.float64)
    f_c = np.asarray(context_features, dtype=np.float64)
    _check_features(target_view, context_view, f_t, f_c)
    geom = warp_geometry(target_view, context_view, target_depth, context_depth, depth_tol)
    loss, grad_t, grad_c = masked_cosine_loss(geom, f_t, f_c)
    return WarpLossResult(loss, geom.mask, grad_t, grad_c)


def warp_loss_total(pairs, depth_tol: float = DEFAULT_DEPTH_TOL) -> WarpTotal:
    """Bidirectional warp loss summed over view pairs.

    ``pairs`` is a sequence of ``(ViewBundle, ViewBundle)``; each pair
    contributes both directed terms, listed in ``per_pair`` in order.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyPairSet("warp_loss_total needs at least one view pair")
    terms = []
    for k, (a, b) in enumerate(pairs):
        for t, c in ((a, b), (b, a)):
            res = warp_distance(t.view, c.view, t.features, c.features, t.depth, c.depth, depth_tol)
            terms.append(PairTerm(t.name or f"pair{k}.{'a' if t is a else 'b'}",
                                  c.name or f"pair{k}.{'a' if c is a else 'b'}",
                                  res.loss, res.mask.depth_consistent_count))
    return WarpTotal(float(sum(t.loss for t in terms)), terms)
