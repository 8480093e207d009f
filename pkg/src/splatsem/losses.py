"""Training-objective terms with analytic gradients, and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.ndimage import correlate1d

from .cosine import cosine_distance_grad
from .errors import EmptyMask, LengthMismatch, NonFiniteComponent, ShapeMismatch

PSNR_CAP = 99.0


@dataclass
class LossWeights:
    lambda_lpips: float = 0.05
    lambda_feat: float = 0.1
    lambda_warp: float = 0.1
    lambda_depth: float = 1.0
    lambda_pose: float = 10.0
    huber_delta: float = 1.0
    depth_mask_fraction: float = 0.9

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            setattr(self, f.name, v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and non-negative, got {v}")
        if not 0 < self.depth_mask_fraction <= 1:
            raise ValueError("depth_mask_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, obj: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown loss weight fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    rgb: float
    feat: float
    warp: float
    depth: float
    pose: float
    total: float
    weights: LossWeights
    grads: dict = field(default_factory=dict)


def zero_perceptual(rendered, target):
    """Stand-in perceptual scorer: always zero with zero gradient."""
    return 0.0, np.zeros_like(np.asarray(rendered, dtype=np.float64))


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def rgb_loss(rendered, target, perceptual=zero_perceptual, lambda_lpips=0.05):
    """Mean absolute color error plus a weighted perceptual score.

    ``perceptual(rendered, target)`` must return ``(score, grad_wrt_rendered)``.
    """
    r, t = _same_shape(rendered, target, "rgb_loss")
    if r.ndim != 3 or r.shape[2] != 3:
        raise ShapeMismatch(f"rgb_loss expects (H, W, 3) images, got {r.shape}")
    diff = r - t
    l1 = float(np.abs(diff).mean())
    p_val, p_grad = perceptual(r, t)
    grad = np.sign(diff) / diff.size + lambda_lpips * np.asarray(p_grad, dtype=np.float64)
    return l1 + lambda_lpips * float(p_val), grad


def feature_loss(rendered_feat, target_feat):
    """Mean over pixels of ``1 - cos(rendered, target)``."""
    r, t = _same_shape(rendered_feat, target_feat, "feature_loss")
    if r.ndim != 3:
        raise ShapeMismatch(f"feature_loss expects (H, W, D) maps, got {r.shape}")
    n = r.shape[0] * r.shape[1]
    dist, g_r, _ = cosine_distance_grad(r, t)
    return float(dist.sum() / n), g_r / n


def confidence_mask(confidence, mask_fraction):
    """Pixels whose confidence reaches the top ``mask_fraction`` share.

    The threshold is the ``ceil(fraction * n)``-th largest finite
    confidence; ties with it are all admitted.
    """
    c = np.asarray(confidence, dtype=np.float64)
    finite = np.isfinite(c)
    vals = c[finite]
    if vals.size == 0:
        raise EmptyMask("no finite confidence values")
    k = max(1, math.ceil(mask_fraction * vals.size))
    threshold = np.sort(vals)[::-1][k - 1]
    return finite & (c >= threshold)


def depth_distill_loss(rendered, pseudo, confidence, mask_fraction=0.9):
    """Squared depth error against pseudo depth on the most confident pixels.

    Returns ``(loss, grad_wrt_rendered, mask)``.
    """
    if not 0 < mask_fraction <= 1:
        raise ValueError("mask_fraction must lie in (0, 1]")
    r, p = _same_shape(rendered, pseudo, "depth_distill_loss")
    _, c = _same_shape(rendered, confidence, "depth_distill_loss confidence")
    if r.ndim == 3 and r.shape[2] != 1:
        raise ShapeMismatch("depth maps must be single-channel")
    mask = confidence_mask(c, mask_fraction)
    n = int(mask.sum())
    resid = np.where(mask, p - r, 0.0)
    loss = float(np.sum(resid ** 2) / n)
    return loss, -2.0 * resid / n, mask


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def pose_distill_loss(pred, pseudo, huber_delta=1.0):
    """Mean over poses of the summed elementwise Huber penalty of ``pseudo - pred``."""
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(pseudo, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"pose lists differ: {p.shape} vs {q.shape}")
    if p.ndim == 1:
        p, q = p[None], q[None]
    n = len(p)
    if n == 0:
        return 0.0, np.zeros_like(p)
    r = q - p
    loss = float(huber(r, huber_delta).sum() / n)
    grad = -np.clip(r, -huber_delta, huber_delta) / n
    return loss, grad.reshape(np.shape(pred))


def total_loss(rgb, feat, warp, depth, pose, weights: LossWeights | None = None, grads=None) -> LossReport:
    """Weighted sum of the five objective terms.

    ``grads`` optionally maps a term name (``"rgb"``, ``"feat"``, ...) to
    the gradient of that term with respect to its input; the report then
    carries the same gradients scaled by the term's weight.
    """
    weights = weights or LossWeights()
    comps = {"rgb": rgb, "feat": feat, "warp": warp, "depth": depth, "pose": pose}
    for k, v in comps.items():
        if not math.isfinite(float(v)):
            raise NonFiniteComponent(f"loss component {k} is not finite: {v}")
    scale = {"rgb": 1.0, "feat": weights.lambda_feat, "warp": weights.lambda_warp,
             "depth": weights.lambda_depth, "pose": weights.lambda_pose}
    total = math.fsum(scale[k] * float(v) for k, v in comps.items())
    scaled = {k: scale[k] * np.asarray(g, dtype=np.float64) for k, g in (grads or {}).items()}
    return LossReport(**{k: float(v) for k, v in comps.items()}, total=total, weights=weights, grads=scaled)


# -- metrics -------------------------------------------------------------------

def psnr(a, b):
    """PSNR in dB for images in [0, 1]; identical images give the 99 dB cap."""
    a, b = _same_shape(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, data_range=1.0):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Statistics are taken over fully covered windows only; channels are
    averaged.
    """
    a, b = _same_shape(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < 11:
        raise ShapeMismatch("ssim needs images of at least 11x11 pixels")
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def blur(x):
        x = correlate1d(x, win, axis=0, mode="reflect")
        x = correlate1d(x, win, axis=1, mode="reflect")
        return x[5:-5, 5:-5]

    mu_a, mu_b = blur(a), blur(b)
    s_aa = blur(a * a) - mu_a ** 2
    s_bb = blur(b * b) - mu_b ** 2
    s_ab = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def confusion_matrix(pred_labels, gt_labels, n_classes):
    """Counts ``[gt, pred]`` over pixels whose gt label is in range; other preds are dropped."""
    p = np.asarray(pred_labels).reshape(-1).astype(np.int64)
    g = np.asarray(gt_labels).reshape(-1).astype(np.int64)
    if p.shape != g.shape:
        raise ShapeMismatch("label grids differ in size")
    keep = (g >= 0) & (g < n_classes)
    p, g = p[keep], g[keep]
    p = np.where((p >= 0) & (p < n_classes), p, n_classes)
    cm = np.bincount(g * (n_classes + 1) + p, minlength=n_classes * (n_classes + 1))
    return cm.reshape(n_classes, n_classes + 1)


def miou(pred_labels, gt_labels, n_classes):
    """Mean IoU over classes present in ``gt_labels``.

    Negative gt labels are ignored.  Predictions outside ``[0, n_classes)``
    count as misses for their pixel's gt class.
    """
    if np.shape(pred_labels) != np.shape(gt_labels):
        raise ShapeMismatch("label grids differ in shape")
    cm = confusion_matrix(pred_labels, gt_labels, n_classes)
    tp = np.diag(cm[:, :n_classes])
    gt_count = cm.sum(axis=1)
    pred_count = cm[:, :n_classes].sum(axis=0)
    present = gt_count > 0
    if not present.any():
        return float("nan")
    iou = tp[present] / (gt_count[present] + pred_count[present] - tp[present])
    return float(iou.mean())
