"""Feature-Gaussian scene representation.

A scene is stored column-wise (struct of arrays) so the renderer and the
voxelizer can work on whole attribute arrays at once; indexing a scene
returns a single :class:`GaussianPrimitive` view for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, ShapeMismatch
from .geometry import CameraView, as_depth_map, unproject_depth

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)
MAX_SH_DEGREE = 3


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def rgb_to_sh_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def eval_sh(sh, dirs, degree: int):
    """Evaluate real spherical harmonics colors.

    ``sh`` is ``(N, (degree+1)**2, 3)``, ``dirs`` unit view directions
    ``(N, 3)``.  Uses the usual splatting convention ``rgb = 0.5 + SH``,
    clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    out = SH_C0 * sh[:, 0]
    if degree > 0:
        x, y, z = (dirs[:, i:i + 1] for i in range(3))
        out = out - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
        if degree > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            out = (out + SH_C2[0] * xy * sh[:, 4] + SH_C2[1] * yz * sh[:, 5]
                   + SH_C2[2] * (2 * zz - xx - yy) * sh[:, 6]
                   + SH_C2[3] * xz * sh[:, 7] + SH_C2[4] * (xx - yy) * sh[:, 8])
            if degree > 2:
                out = (out + SH_C3[0] * y * (3 * xx - yy) * sh[:, 9]
                       + SH_C3[1] * xy * z * sh[:, 10]
                       + SH_C3[2] * y * (4 * zz - xx - yy) * sh[:, 11]
                       + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[:, 12]
                       + SH_C3[4] * x * (4 * zz - xx - yy) * sh[:, 13]
                       + SH_C3[5] * z * (xx - yy) * sh[:, 14]
                       + SH_C3[6] * x * (xx - 3 * yy) * sh[:, 15])
    return np.maximum(out + 0.5, 0.0)


@dataclass(frozen=True)
class GaussianPrimitive:
    center: np.ndarray
    covariance: np.ndarray
    sh_color: np.ndarray
    opacity: float
    feature: np.ndarray
    confidence: float


@dataclass(eq=False)
class GaussianScene:
    """An ordered set of feature Gaussians.

    Attributes
    ----------
    centers : (N, 3)
    covariances : (N, 3, 3) symmetric PSD
    sh : (N, (sh_degree+1)**2, 3)
    opacities : (N,) in [0, 1]
    features : (N, D)
    confidences : (N,) non-negative
    sh_degree : int
    labels : optional (N,) integer class ids (synthetic scenes only; not serialized)
    """

    centers: np.ndarray
    covariances: np.ndarray
    sh: np.ndarray
    opacities: np.ndarray
    features: np.ndarray
    confidences: np.ndarray
    sh_degree: int = 0
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.covariances = np.asarray(self.covariances, dtype=np.float64).reshape(n, 3, 3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, sh_coeff_count(self.sh_degree), 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.confidences = np.asarray(self.confidences, dtype=np.float64).reshape(n)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or len(features) != n:
            raise ShapeMismatch(f"features must be (N={n}, D), got {features.shape}")
        self.features = features
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise InvariantViolation(f"sh_degree must be in [0, {MAX_SH_DEGREE}], got {self.sh_degree}")

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> GaussianPrimitive:
        return GaussianPrimitive(self.centers[i], self.covariances[i], self.sh[i],
                                 float(self.opacities[i]), self.features[i], float(self.confidences[i]))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, feature_dim: int, sh_degree: int = 0):
        k = sh_coeff_count(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, k, 3)), np.zeros(0),
                   np.zeros((0, feature_dim)), np.zeros(0), sh_degree)

    @classmethod
    def from_primitives(cls, primitives, feature_dim=None, sh_degree=0):
        primitives = list(primitives)
        if not primitives:
            if feature_dim is None:
                raise ShapeMismatch("feature_dim is required for an empty primitive list")
            return cls.empty(feature_dim, sh_degree)
        return cls(
            np.stack([p.center for p in primitives]),
            np.stack([p.covariance for p in primitives]),
            np.stack([np.asarray(p.sh_color, dtype=np.float64).reshape(-1, 3) for p in primitives]),
            np.array([p.opacity for p in primitives]),
            np.stack([p.feature for p in primitives]),
            np.array([p.confidence for p in primitives]),
            sh_degree,
        )

    def subset(self, index):
        """New scene with the primitives selected by ``index`` (mask or integer array)."""
        labels = None if self.labels is None else self.labels[index]
        return GaussianScene(self.centers[index], self.covariances[index], self.sh[index],
                             self.opacities[index], self.features[index], self.confidences[index],
                             self.sh_degree, labels)

    def concat(self, other: GaussianScene):
        if other.feature_dim != self.feature_dim or other.sh_degree != self.sh_degree:
            raise ShapeMismatch("scenes differ in feature_dim or sh_degree")
        labels = None
        if self.labels is not None and other.labels is not None:
            labels = np.concatenate([self.labels, other.labels])
        return GaussianScene(
            np.concatenate([self.centers, other.centers]),
            np.concatenate([self.covariances, other.covariances]),
            np.concatenate([self.sh, other.sh]),
            np.concatenate([self.opacities, other.opacities]),
            np.concatenate([self.features, other.features]),
            np.concatenate([self.confidences, other.confidences]),
            self.sh_degree, labels)

    def base_colors(self):
        """View-independent (degree-0) RGB of every primitive."""
        return np.maximum(SH_C0 * self.sh[:, 0] + 0.5, 0.0)

    def validate(self, sym_tol=1e-12, psd_tol=1e-10):
        """Raise :class:`InvariantViolation` naming the first bad primitive."""
        finite = (np.isfinite(self.centers).all(1) & np.isfinite(self.covariances).all((1, 2))
                  & np.isfinite(self.sh).all((1, 2)) & np.isfinite(self.opacities)
                  & np.isfinite(self.features).all(1) & np.isfinite(self.confidences))
        bad = np.flatnonzero(~finite)
        if bad.size:
            raise InvariantViolation("non-finite attribute", int(bad[0]))
        checks = [
            ((self.opacities < 0) | (self.opacities > 1), "opacity outside [0, 1]"),
            (self.confidences < 0, "negative confidence"),
            (np.abs(self.covariances - self.covariances.transpose(0, 2, 1)).max((1, 2), initial=0.0) > sym_tol,
             "covariance is not symmetric"),
        ]
        if len(self):
            sym = 0.5 * (self.covariances + self.covariances.transpose(0, 2, 1))
            checks.append((np.linalg.eigvalsh(sym)[:, 0] < -psd_tol, "covariance is not PSD"))
        first = None
        for mask, message in checks:
            idx = np.flatnonzero(mask)
            if idx.size and (first is None or idx[0] < first[0]):
                first = (int(idx[0]), message)
        if first is not None:
            raise InvariantViolation(first[1], first[0])
        return self


def pixel_aligned_scene(view: CameraView, depth, colors, features, opacities, confidences,
                        base_scale: float = 1.0) -> GaussianScene:
    """One isotropic Gaussian per valid-depth pixel.

    Centers are the unprojected pixel centers; the covariance
    ``(base_scale * depth / fx)**2 * I`` gives every splat a roughly
    constant screen-space footprint of ``base_scale`` pixels.
    """
    depth = as_depth_map(depth, view)
    h, w = depth.shape[:2]
    colors = np.asarray(colors, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    opacities = np.asarray(opacities, dtype=np.float64).reshape(h, w, -1) if np.size(opacities) == h * w else None
    confidences = np.asarray(confidences, dtype=np.float64).reshape(h, w, -1) if np.size(confidences) == h * w else None
    if opacities is None or confidences is None:
        raise ShapeMismatch("opacity and confidence maps must be H x W x 1")
    if colors.shape != (h, w, 3):
        raise ShapeMismatch(f"color map must be {h}x{w}x3, got {colors.shape}")
    if features.ndim != 3 or features.shape[:2] != (h, w):
        raise ShapeMismatch(f"feature map must be {h}x{w}xD, got {features.shape}")
    points, valid = unproject_depth(view, depth)
    d = depth[..., 0][valid]
    var = (base_scale * d / view.fx) ** 2
    return GaussianScene(
        centers=points[valid],
        covariances=var[:, None, None] * np.eye(3),
        sh=rgb_to_sh_dc(colors[valid])[:, None, :],
        opacities=opacities[..., 0][valid],
        features=features[valid],
        confidences=confidences[..., 0][valid],
        sh_degree=0,
    )
