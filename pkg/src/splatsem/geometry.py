"""Pinhole cameras, projection/unprojection and bilinear grid sampling.

Pixel convention: integer pixel ``(u, v)`` (column, row) covers the
continuous square ``[u, u+1) x [v, v+1)`` and its center sits at
``(u + 0.5, v + 0.5)``.  Dense maps are ``(H, W, C)`` float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCamera, NonPositiveDepth, ShapeMismatch

NEAR_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class CameraView:
    """Zero-skew pinhole camera with a world-to-camera pose.

    ``rotation`` and ``translation`` map world points into the camera
    frame: ``x_cam = rotation @ x_world + translation``.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.array(self.translation, dtype=np.float64).reshape(3)
        for arr in (K, R, T):
            arr.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        self.validate()

    @classmethod
    def from_params(cls, fx, fy, cx, cy, width, height, rotation=None, translation=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        R = np.eye(3) if rotation is None else rotation
        T = np.zeros(3) if translation is None else translation
        return cls(K, R, T, width, height)

    def validate(self):
        K, R = self.intrinsics, self.rotation
        if self.width <= 0 or self.height <= 0:
            raise InvalidCamera(f"image size must be positive, got {self.width}x{self.height}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(self.translation))):
            raise InvalidCamera("camera parameters must be finite")
        if K[0, 1] != 0.0 or K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
            raise InvalidCamera("intrinsics must be zero-skew [[fx,0,cx],[0,fy,cy],[0,0,1]]")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCamera("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidCamera("principal point must lie strictly inside the image")
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9:
            raise InvalidCamera("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidCamera("rotation must have determinant +1")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera rotation/translation for a camera at ``eye`` facing ``target``.

    Camera axes follow the usual vision convention: +z forward, +x right,
    +y down.  ``up`` is the world direction that should appear upward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise InvalidCamera("look_at: up vector is parallel to the viewing direction")
    right /= norm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ eye


def relative_pose(source: CameraView, target: CameraView):
    """Pose taking source-camera coordinates to target-camera coordinates."""
    R = target.rotation @ source.rotation.T
    T = target.translation - R @ source.translation
    return R, T


def project_point(view: CameraView, point_cam):
    """Perspective projection of one camera-frame point.

    Returns ``((u, v), z)``.  Raises :class:`NonPositiveDepth` when the
    point is not in front of the camera.
    """
    x, y, z = (float(c) for c in np.asarray(point_cam, dtype=np.float64).reshape(3))
    if z <= NEAR_EPS:
        raise NonPositiveDepth(f"point depth {z} is not positive")
    return (view.fx * x / z + view.cx, view.fy * y / z + view.cy), z


def project_points(view: CameraView, points_cam):
    """Vectorized :func:`project_point`.

    Returns ``(uv, z, valid)`` with ``uv`` of shape ``(..., 2)``.  Invalid
    entries (``z <= 1e-8``) carry NaN coordinates.
    """
    p = np.asarray(points_cam, dtype=np.float64)
    z = p[..., 2]
    valid = z > NEAR_EPS
    safe_z = np.where(valid, z, 1.0)
    uv = np.stack([view.fx * p[..., 0] / safe_z + view.cx,
                   view.fy * p[..., 1] / safe_z + view.cy], axis=-1)
    uv[~valid] = np.nan
    return uv, z, valid


def backproject(view: CameraView, uv, depth):
    """Camera-frame points at continuous pixel coordinates ``uv`` and depths ``depth``."""
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - view.cx) / view.fx
    y = (uv[..., 1] - view.cy) / view.fy
    return np.stack([x * depth, y * depth, depth], axis=-1)


def pixel_centers(height: int, width: int):
    """``(H, W, 2)`` array of pixel-center coordinates ``(u + 0.5, v + 0.5)``."""
    vv, uu = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    return np.stack([uu + 0.5, vv + 0.5], axis=-1)


def as_depth_map(depth, view: CameraView | None = None):
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        depth = depth[..., None]
    if depth.ndim != 3 or depth.shape[2] != 1:
        raise ShapeMismatch(f"depth map must be single-channel, got shape {depth.shape}")
    if view is not None and depth.shape[:2] != (view.height, view.width):
        raise ShapeMismatch(
            f"depth map is {depth.shape[0]}x{depth.shape[1]}, camera is {view.height}x{view.width}")
    return depth


def unproject_depth(view: CameraView, depth):
    """Lift every pixel center to a world-frame point.

    Returns ``(points, valid)`` where ``points`` is ``(H, W, 3)``.  Pixels
    with depth <= 0 are invalid and their point is NaN.
    """
    depth = as_depth_map(depth)[..., 0]
    h, w = depth.shape
    valid = depth > 0
    cam = backproject(view, pixel_centers(h, w), depth)
    world = view.camera_to_world(cam)
    world[~valid] = np.nan
    return world, valid


def bilinear_taps(coords, height: int, width: int):
    """Texel indices and weights for bilinear sampling at ``coords``.

    Returns ``(rows, cols, weights, valid)`` where ``rows``/``cols`` are
    integer arrays of shape ``(..., 4)`` and ``weights`` sums to one over
    the last axis.  A coordinate is valid when its full 2x2 texel
    neighbourhood lies inside the map, i.e. ``0.5 <= u <= W - 0.5`` and the
    same for ``v``.  Invalid taps point at texel (0, 0) with zero weight.
    """
    coords = np.asarray(coords, dtype=np.float64)
    u = coords[..., 0] - 0.5
    v = coords[..., 1] - 0.5
    valid = (np.isfinite(u) & np.isfinite(v)
             & (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1))
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    x0 = np.clip(np.floor(u), 0, max(width - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(v), 0, max(height - 2, 0)).astype(np.int64)
    ax = u - x0
    ay = v - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    rows = np.stack([y0, y0, y1, y1], axis=-1)
    cols = np.stack([x0, x1, x0, x1], axis=-1)
    weights = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=-1)
    weights[~valid] = 0.0
    return rows, cols, weights, valid


def grid_sample_bilinear(dense_map, coords):
    """Bilinearly sample an ``(H, W, C)`` map at continuous pixel coordinates.

    ``coords`` has shape ``(..., 2)`` holding ``(u, v)``.  Returns
    ``(values, valid)``; invalid samples are zero.
    """
    dense_map = np.asarray(dense_map, dtype=np.float64)
    if dense_map.ndim != 3:
        raise ShapeMismatch(f"expected an (H, W, C) map, got shape {dense_map.shape}")
    h, w, _ = dense_map.shape
    rows, cols, weights, valid = bilinear_taps(coords, h, w)
    values = np.einsum("...k,...kc->...c", weights, dense_map[rows, cols])
    return values, valid


def grid_sample_bilinear_backward(grad_values, coords, height: int, width: int):
    """Adjoint of :func:`grid_sample_bilinear` with respect to the sampled map.

    Scatters ``grad_values`` (shape ``(..., C)``) back onto an
    ``(H, W, C)`` map; coordinates are treated as constants.
    """
    grad_values = np.asarray(grad_values, dtype=np.float64)
    rows, cols, weights, valid = bilinear_taps(coords, height, width)
    c = grad_values.shape[-1]
    out = np.zeros((height * width, c))
    flat = (rows * width + cols).reshape(-1)
    contrib = (weights[..., None] * grad_values[..., None, :]).reshape(-1, c)
    # np.add.at accumulates sequentially, so repeated taps are order-stable
    np.add.at(out, flat, contrib)
    return out.reshape(height, width, c)
