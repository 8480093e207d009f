"""Deterministic synthetic multi-view scenes.

Every random draw goes through :func:`make_rng`, a numpy ``Generator`` on
the xoshiro256** bit generator (from ``randomgen``) seeded with the
scene seed, so a ``(seed, config)`` pair always yields bit-identical
scenes regardless of the platform's default generator.

A scene is a ground plane plus axis-aligned boxes, each surface sampled
on a regular grid of small isotropic Gaussians.  Every object carries one
semantic class and every Gaussian's feature is exactly its class feature
(classes are orthonormal vectors), unless it is deliberately corrupted as
an outlier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from randomgen import Xoshiro256

from .errors import ConfigError
from .geometry import CameraView, look_at, project_points
from .scene import GaussianScene, rgb_to_sh_dc


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(Xoshiro256(int(seed)))


@dataclass
class SynthConfig:
    n_objects: int = 4
    n_classes: int = 4
    feature_dim: int = 8
    n_cameras: int = 4
    image_size: int = 96
    orbit_radius: float = 4.0
    spacing: float = 0.017
    elevation_deg: float = 35.0
    focal_scale: float = 1.1
    outlier_fraction: float = 0.0
    outlier_confidence_boost: float = 3.0

    def __post_init__(self):
        ints = ("n_objects", "n_classes", "feature_dim", "n_cameras", "image_size")
        for name in ints:
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
            setattr(self, name, int(getattr(self, name)))
        for name in ("orbit_radius", "spacing", "focal_scale"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_classes > self.feature_dim:
            raise ConfigError("n_classes must not exceed feature_dim (class features are orthonormal)")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError("outlier_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synth config fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


def outlier_config(**overrides) -> SynthConfig:
    """Default scene with a share of confident, semantically wrong Gaussians."""
    params = dict(outlier_fraction=0.15, outlier_confidence_boost=3.0)
    params.update(overrides)
    return SynthConfig(**params)


@dataclass
class SyntheticScene:
    seed: int
    config: SynthConfig
    gaussians: GaussianScene
    class_features: np.ndarray
    cameras: list
    labels: list = field(default_factory=list)
    outliers: np.ndarray | None = None


def _grid_face(origin, u_vec, v_vec, spacing):
    nu = max(1, int(round(np.linalg.norm(u_vec) / spacing)))
    nv = max(1, int(round(np.linalg.norm(v_vec) / spacing)))
    a = (np.arange(nu) + 0.5) / nu
    b = (np.arange(nv) + 0.5) / nv
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return origin + aa.reshape(-1, 1) * u_vec + bb.reshape(-1, 1) * v_vec


def _box_surface(lo, hi, spacing):
    """Points on the five visible faces (all but the bottom) of a box; y is up."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ex, ey, ez = np.diag(hi - lo)
    faces = [
        _grid_face(lo + ey, ex, ez, spacing),                # top (y = hi)
        _grid_face(lo, ex, ey, spacing),                     # z = lo
        _grid_face(lo + ez, ex, ey, spacing),                # z = hi
        _grid_face(lo, ey, ez, spacing),                     # x = lo
        _grid_face(lo + ex, ey, ez, spacing),                # x = hi
    ]
    return np.concatenate(faces)


def _texture(points, base, rng):
    freq = rng.uniform(2.0, 5.0, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    shade = 0.08 * np.sin(points @ np.diag(freq) + phase).sum(axis=1, keepdims=True)
    return np.clip(base + shade, 0.02, 0.98)


def generate(seed: int = 0, config: SynthConfig | None = None) -> SyntheticScene:
    config = config or SynthConfig()
    rng = make_rng(seed)
    D, K = config.feature_dim, config.n_classes

    q, _ = np.linalg.qr(rng.normal(size=(D, D)))
    class_features = q[:, :K].T.copy()

    # object 0 is the ground plane; y is up, plane at y = 0
    half = 1.5
    object_points = [_grid_face(np.array([-half, 0.0, -half]), np.array([2 * half, 0, 0]),
                                np.array([0, 0, 2 * half]), config.spacing)]
    placed = []
    for _ in range(config.n_objects - 1):
        for _attempt in range(50):
            size = rng.uniform(0.35, 0.8, size=3)
            pos = rng.uniform(-half + 0.5, half - 0.5, size=2)
            if all(abs(pos[0] - p[0]) > 0.5 * (size[0] + s[0]) + 0.05 or
                   abs(pos[1] - p[1]) > 0.5 * (size[2] + s[2]) + 0.05 for p, s in placed):
                break
        placed.append((pos, size))
        lo = np.array([pos[0] - size[0] / 2, 0.0, pos[1] - size[2] / 2])
        object_points.append(_box_surface(lo, lo + size, config.spacing))

    obj_class = np.arange(config.n_objects) % K
    rng.shuffle(obj_class[1:])
    base_colors = rng.uniform(0.1, 0.9, size=(config.n_objects, 3))

    centers, colors, labels = [], [], []
    for o, pts in enumerate(object_points):
        centers.append(pts)
        colors.append(_texture(pts, base_colors[o], rng))
        labels.append(np.full(len(pts), obj_class[o]))
    centers = np.concatenate(centers)
    colors = np.concatenate(colors)
    labels = np.concatenate(labels)
    n = len(centers)

    sigma = 0.6 * config.spacing
    features = class_features[labels].copy()
    opacities = rng.uniform(0.85, 0.98, size=n)
    confidences = rng.uniform(0.0, 1.0, size=n)

    outliers = np.zeros(n, dtype=bool)
    if config.outlier_fraction > 0 and K > 1:
        outliers = rng.random(n) < config.outlier_fraction
        m = int(outliers.sum())
        wrong = (labels[outliers] + rng.integers(1, K, size=m)) % K
        features[outliers] = class_features[wrong]
        colors[outliers] = rng.uniform(0.0, 1.0, size=(m, 3))
        confidences[outliers] += config.outlier_confidence_boost

    gaussians = GaussianScene(
        centers=centers,
        covariances=np.broadcast_to(sigma ** 2 * np.eye(3), (n, 3, 3)).copy(),
        sh=rgb_to_sh_dc(colors)[:, None, :],
        opacities=opacities,
        features=features,
        confidences=confidences,
        sh_degree=0,
        labels=labels,
    )

    target = np.array([0.0, 0.25, 0.0])
    size = config.image_size
    f = config.focal_scale * size
    elev = math.radians(config.elevation_deg)
    az0 = rng.uniform(0, 2 * np.pi)
    cameras = []
    for i in range(config.n_cameras):
        az = az0 + 2 * np.pi * i / config.n_cameras
        eye = target + config.orbit_radius * np.array(
            [math.cos(elev) * math.cos(az), math.sin(elev), math.cos(elev) * math.sin(az)])
        R, T = look_at(eye, target, up=(0.0, 1.0, 0.0))
        cameras.append(CameraView.from_params(f, f, size / 2, size / 2, size, size, R, T))

    scene = SyntheticScene(seed, config, gaussians, class_features, cameras, outliers=outliers)
    scene.labels = [projected_labels(gaussians, cam) for cam in cameras]
    return scene


def projected_labels(scene: GaussianScene, view: CameraView):
    """Ground-truth label grid: class of the nearest Gaussian center landing in each pixel.

    Pixels that no center lands in are -1.  This is a plain z-buffer over
    point projections and shares nothing with the splat renderer.
    """
    cam = view.world_to_camera(scene.centers)
    uv, z, ok = project_points(view, cam)
    ok &= np.isfinite(uv).all(axis=1)
    u = np.floor(np.where(ok, uv[:, 0], -1)).astype(np.int64)
    v = np.floor(np.where(ok, uv[:, 1], -1)).astype(np.int64)
    ok &= (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)
    idx = np.flatnonzero(ok)
    pix = v[idx] * view.width + u[idx]
    order = np.lexsort((idx, z[idx], pix))
    pix, idx = pix[order], idx[order]
    first = np.r_[True, pix[1:] != pix[:-1]]
    out = np.full(view.height * view.width, -1, dtype=np.int64)
    out[pix[first]] = scene.labels[idx[first]]
    return out.reshape(view.height, view.width)


def label_map(features, alpha, class_features, alpha_min=0.5):
    """Argmax-cosine class of each pixel's feature; -1 where ``alpha <= alpha_min``."""
    f = np.asarray(features, dtype=np.float64)
    cf = np.asarray(class_features, dtype=np.float64)
    norms = np.linalg.norm(f, axis=-1, keepdims=True)
    cos = (f / np.maximum(norms, 1e-12)) @ (cf / np.linalg.norm(cf, axis=1, keepdims=True)).T
    labels = np.argmax(cos, axis=-1)
    return np.where(np.asarray(alpha).reshape(labels.shape) > alpha_min, labels, -1)


# -- small randomized fixtures ---------------------------------------------------

def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    Kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def random_camera(rng, width=8, height=8, max_angle=np.pi):
    f = rng.uniform(0.8, 1.5) * width
    return CameraView.from_params(f, f * rng.uniform(0.9, 1.1), width / 2 + rng.uniform(-0.5, 0.5),
                                  height / 2 + rng.uniform(-0.5, 0.5), width, height,
                                  random_rotation(rng, max_angle), rng.normal(size=3))


def plane_depth(view: CameraView, normal, offset):
    """Depth map of the plane ``normal . X = offset`` seen from ``view`` (0 where not hit)."""
    h, w = view.height, view.width
    vv, uu = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    rays = np.stack([(uu - view.cx) / view.fx, (vv - view.cy) / view.fy, np.ones_like(uu)], axis=-1)
    n_cam = view.rotation @ np.asarray(normal, dtype=np.float64)
    # camera-frame plane: n_cam . x = offset + n_cam . T
    rhs = offset + n_cam @ view.translation
    denom = rays @ n_cam
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = rhs / denom
    depth = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0)
    return depth[..., None]


@dataclass
class WarpInstance:
    target: CameraView
    context: CameraView
    target_features: np.ndarray
    context_features: np.ndarray
    target_depth: np.ndarray
    context_depth: np.ndarray


def random_warp_instance(seed, size=8, dim=4) -> WarpInstance:
    """Two cameras looking at a common plane from nearby poses, with random features."""
    rng = make_rng(seed)
    normal = np.array([0.0, 0.0, 1.0]) + 0.2 * rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    offset = rng.uniform(3.0, 5.0)
    f = rng.uniform(0.9, 1.3) * size
    target = CameraView.from_params(f, f, size / 2, size / 2, size, size,
                                    random_rotation(rng, 0.05), 0.1 * rng.normal(size=3))
    context = CameraView.from_params(f * rng.uniform(0.95, 1.05), f, size / 2 + rng.uniform(-0.3, 0.3),
                                     size / 2, size, size, random_rotation(rng, 0.08),
                                     0.3 * rng.normal(size=3))
    return WarpInstance(target, context,
                        rng.normal(size=(size, size, dim)), rng.normal(size=(size, size, dim)),
                        plane_depth(target, normal, offset), plane_depth(context, normal, offset))


def random_scene(seed, n=200, dim=8, extent=1.0, sh_degree=0) -> GaussianScene:
    """Unstructured scene with random anisotropic covariances."""
    rng = make_rng(seed)
    A = rng.normal(size=(n, 3, 3)) * 0.05
    cov = A @ A.transpose(0, 2, 1) + 1e-4 * np.eye(3)
    k = (sh_degree + 1) ** 2
    return GaussianScene(rng.uniform(-extent, extent, size=(n, 3)), cov, rng.normal(size=(n, k, 3)) * 0.5,
                         rng.uniform(0.05, 1.0, size=n), rng.normal(size=(n, dim)),
                         rng.uniform(0.0, 2.0, size=n), sh_degree)
