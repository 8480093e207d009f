"""File formats: DMAP dense maps, camera JSON, FGSC scenes and PPM images.

All binary formats are little-endian with 32-bit floats; values are
promoted to float64 on load.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch, SplatSemError
from .geometry import CameraView
from .scene import GaussianScene, MAX_SH_DEGREE, sh_coeff_count

DMAP_MAGIC = b"DMAP"
SCENE_MAGIC = b"FGSC"
SCENE_VERSION = 1

_TRIU = np.triu_indices(3)


def atomic_write(path, data: bytes):
    """Write ``data`` via a temporary file so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- dense maps --------------------------------------------------------------

def encode_dmap(dense_map) -> bytes:
    arr = np.asarray(dense_map, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ShapeMismatch(f"dense map must be (H, W, C), got {arr.shape}")
    h, w, c = arr.shape
    return DMAP_MAGIC + struct.pack("<III", h, w, c) + arr.astype("<f4").tobytes(order="C")


def decode_dmap(buf: bytes):
    if len(buf) < 16:
        raise ParseError("truncated DMAP header", len(buf))
    if buf[:4] != DMAP_MAGIC:
        raise ParseError("bad DMAP magic", 0)
    h, w, c = struct.unpack_from("<III", buf, 4)
    expected = 16 + 4 * h * w * c
    if len(buf) != expected:
        raise ParseError(f"DMAP payload length {len(buf)} != expected {expected}", min(len(buf), expected))
    data = np.frombuffer(buf, dtype="<f4", offset=16).astype(np.float64)
    return data.reshape(h, w, c)


def write_dmap(path, dense_map):
    atomic_write(path, encode_dmap(dense_map))


def read_dmap(path):
    return decode_dmap(Path(path).read_bytes())


# -- cameras -----------------------------------------------------------------

def camera_to_dict(view: CameraView) -> dict:
    return {
        "fx": view.fx, "fy": view.fy, "cx": view.cx, "cy": view.cy,
        "width": view.width, "height": view.height,
        "rotation": [float(x) for x in view.rotation.reshape(-1)],
        "translation": [float(x) for x in view.translation],
    }


def camera_from_dict(obj: dict) -> CameraView:
    try:
        rotation = np.array(obj["rotation"], dtype=np.float64)
        translation = np.array(obj["translation"], dtype=np.float64)
        if rotation.size != 9 or translation.size != 3:
            raise ParseError("camera rotation needs 9 values and translation 3")
        return CameraView.from_params(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]),
                                      int(obj["width"]), int(obj["height"]),
                                      rotation.reshape(3, 3), translation)
    except SplatSemError:
        raise
    except KeyError as exc:
        raise ParseError(f"camera JSON missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed camera JSON: {exc}") from None


def write_camera(path, view: CameraView):
    atomic_write(path, (json.dumps(camera_to_dict(view), indent=2) + "\n").encode())


def read_camera(path) -> CameraView:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    return camera_from_dict(obj)


# -- scenes ------------------------------------------------------------------

def encode_scene(scene: GaussianScene) -> bytes:
    n, d, deg = len(scene), scene.feature_dim, scene.sh_degree
    header = SCENE_MAGIC + struct.pack("<IIII", SCENE_VERSION, n, d, deg)
    records = np.concatenate([
        scene.centers,
        scene.covariances[:, _TRIU[0], _TRIU[1]],
        scene.sh.reshape(n, 3 * sh_coeff_count(deg)),
        scene.opacities[:, None],
        scene.confidences[:, None],
        scene.features,
    ], axis=1)
    return header + records.astype("<f4").tobytes(order="C")


def decode_scene(buf: bytes) -> GaussianScene:
    if len(buf) < 20:
        raise ParseError("truncated scene header", len(buf))
    if buf[:4] != SCENE_MAGIC:
        raise ParseError("bad scene magic", 0)
    version, n, d, deg = struct.unpack_from("<IIII", buf, 4)
    if version != SCENE_VERSION:
        raise ParseError(f"unsupported scene version {version}", 4)
    if deg > MAX_SH_DEGREE:
        raise ParseError(f"sh_degree {deg} exceeds {MAX_SH_DEGREE}", 16)
    k = sh_coeff_count(deg)
    width = 3 + 6 + 3 * k + 2 + d
    expected = 20 + 4 * n * width
    if len(buf) != expected:
        raise ParseError(f"scene length {len(buf)} != expected {expected}", min(len(buf), expected))
    rec = np.frombuffer(buf, dtype="<f4", offset=20).astype(np.float64).reshape(n, width)
    cov = np.zeros((n, 3, 3))
    cov[:, _TRIU[0], _TRIU[1]] = rec[:, 3:9]
    cov[:, _TRIU[1], _TRIU[0]] = rec[:, 3:9]
    o = 9 + 3 * k
    scene = GaussianScene(rec[:, :3], cov, rec[:, 9:o].reshape(n, k, 3), rec[:, o], rec[:, o + 2:],
                          rec[:, o + 1], deg)
    return scene.validate()


def save_scene(scene: GaussianScene, path):
    scene.validate()
    atomic_write(path, encode_scene(scene))


def load_scene(path) -> GaussianScene:
    return decode_scene(Path(path).read_bytes())


# -- images --------------------------------------------------------------------

def encode_ppm(rgb) -> bytes:
    """Binary P6, 8-bit; values in [0, 1] rounded half-up."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"PPM needs an (H, W, 3) image, got {rgb.shape}")
    h, w, _ = rgb.shape
    q = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + q.tobytes(order="C")


def write_ppm(path, rgb):
    atomic_write(path, encode_ppm(rgb))
