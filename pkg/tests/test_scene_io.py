import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatsem import io
from splatsem.errors import InvariantViolation, ParseError, ShapeMismatch
from splatsem.geometry import CameraView, project_points
from splatsem.scene import GaussianPrimitive, GaussianScene, eval_sh, pixel_aligned_scene, rgb_to_sh_dc
from splatsem.synth import make_rng, random_camera, random_scene

from conftest import assert_close


def to_f32(scene):
    """Scene with every attribute rounded through float32, as stored on disk."""
    r = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
    return GaussianScene(r(scene.centers), r(scene.covariances), r(scene.sh), r(scene.opacities),
                         r(scene.features), r(scene.confidences), scene.sh_degree)


def scenes_equal(a, b):
    return all(np.array_equal(getattr(a, f), getattr(b, f))
               for f in ("centers", "covariances", "sh", "opacities", "features", "confidences")) \
        and a.sh_degree == b.sh_degree


def test_pixel_aligned_scene_counts_and_round_trip():
    view = CameraView.from_params(2.0, 2.0, 1.0, 1.0, 2, 2)
    ones = np.ones((2, 2, 1))
    sc = pixel_aligned_scene(view, ones, np.full((2, 2, 3), 0.5), np.ones((2, 2, 4)), ones * 0.5, ones)
    assert len(sc) == 4
    assert_close(sc.centers[:, 2], np.ones(4), 0)
    assert_close(sc.base_colors(), np.full((4, 3), 0.5), 1e-15)
    depth = ones.copy()
    depth[0, 1] = 0
    sc = pixel_aligned_scene(view, depth, np.zeros((2, 2, 3)), np.ones((2, 2, 4)), ones, ones)
    assert len(sc) == 3


def test_pixel_aligned_centers_reproject():
    rng = make_rng(4)
    view = random_camera(rng, 12, 10)
    depth = rng.uniform(0.5, 4.0, size=(10, 12, 1))
    sc = pixel_aligned_scene(view, depth, rng.uniform(size=(10, 12, 3)), rng.normal(size=(10, 12, 5)),
                             np.full((10, 12, 1), 0.7), np.ones((10, 12, 1)), base_scale=1.5)
    uv, z, ok = project_points(view, view.world_to_camera(sc.centers))
    vv, uu = np.mgrid[0:10, 0:12]
    assert ok.all()
    assert_close(uv, np.column_stack([uu.ravel() + 0.5, vv.ravel() + 0.5]), 1e-6)
    assert_close(sc.covariances[:, 0, 0], (1.5 * depth.ravel() / view.fx) ** 2, 1e-15)


def test_pixel_aligned_shape_errors():
    view = CameraView.from_params(2.0, 2.0, 1.0, 1.0, 2, 2)
    ones = np.ones((2, 2, 1))
    with pytest.raises(ShapeMismatch):
        pixel_aligned_scene(view, ones, np.zeros((2, 2, 4)), np.ones((2, 2, 4)), ones, ones)
    with pytest.raises(ShapeMismatch):
        pixel_aligned_scene(view, ones, np.zeros((2, 2, 3)), np.ones((3, 2, 4)), ones, ones)


def test_sh_degree0_and_constant_color():
    rgb = np.array([[0.2, 0.5, 0.9]])
    sh = rgb_to_sh_dc(rgb)[:, None, :]
    assert_close(eval_sh(sh, np.array([[0, 0, 1.0]]), 0), rgb, 1e-15)
    # higher-order bands vanish -> view independent
    sh3 = np.concatenate([sh, np.zeros((1, 15, 3))], axis=1)
    dirs = make_rng(0).normal(size=(5, 3))
    assert_close(eval_sh(np.repeat(sh3, 5, 0), dirs, 3), np.repeat(rgb, 5, 0), 1e-15)


def test_validate_names_first_bad_primitive():
    sc = random_scene(0, n=10)
    sc.opacities[6] = 1.5
    sc.covariances[3] = -np.eye(3) * 1e-3
    with pytest.raises(InvariantViolation) as exc:
        sc.validate()
    assert exc.value.index == 3
    asym = random_scene(1, n=5)
    asym.covariances[2, 0, 1] += 1e-6
    with pytest.raises(InvariantViolation) as exc:
        asym.validate()
    assert exc.value.index == 2


def test_empty_scene_round_trip(tmp_path):
    sc = GaussianScene.empty(6, sh_degree=2)
    io.save_scene(sc, tmp_path / "e.fgsc")
    back = io.load_scene(tmp_path / "e.fgsc")
    assert len(back) == 0 and back.feature_dim == 6 and back.sh_degree == 2


@pytest.mark.parametrize("deg", [0, 1, 3])
def test_scene_round_trip_bit_exact(tmp_path, deg):
    sc = to_f32(random_scene(7, n=1000, dim=5, sh_degree=deg))
    io.save_scene(sc, tmp_path / "s.fgsc")
    back = io.load_scene(tmp_path / "s.fgsc")
    assert scenes_equal(sc, back)
    assert io.encode_scene(back) == io.encode_scene(sc)


def test_scene_file_layout():
    sc = GaussianScene.from_primitives([GaussianPrimitive(np.array([1.0, 2, 3]), np.diag([1.0, 2, 3]),
                                                          np.array([[0.5, 0.25, 0.125]]), 0.5,
                                                          np.array([7.0, 8.0]), 2.0)])
    buf = io.encode_scene(sc)
    assert buf[:4] == b"FGSC"
    assert struct.unpack_from("<IIII", buf, 4) == (1, 1, 2, 0)
    rec = struct.unpack_from("<16f", buf, 20)
    assert rec == (1, 2, 3, 1, 0, 0, 2, 0, 3, 0.5, 0.25, 0.125, 0.5, 2.0, 7.0, 8.0)
    assert len(buf) == 20 + 16 * 4


def test_scene_file_with_bad_opacity(tmp_path):
    sc = random_scene(2, n=4)
    buf = bytearray(io.encode_scene(sc))
    width = 3 + 6 + 3 + 2 + sc.feature_dim
    struct.pack_into("<f", buf, 20 + 4 * (2 * width + 12), 1.5)
    with pytest.raises(InvariantViolation) as exc:
        io.decode_scene(bytes(buf))
    assert exc.value.index == 2


def test_scene_parse_errors():
    good = io.encode_scene(random_scene(3, n=3))
    with pytest.raises(ParseError) as exc:
        io.decode_scene(b"XXXX" + good[4:])
    assert exc.value.offset == 0
    with pytest.raises(ParseError):
        io.decode_scene(good[:-3])
    with pytest.raises(ParseError):
        io.decode_scene(good[:10])
    bad_version = bytearray(good)
    struct.pack_into("<I", bad_version, 4, 9)
    with pytest.raises(ParseError) as exc:
        io.decode_scene(bytes(bad_version))
    assert exc.value.offset == 4


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), c=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_dmap_round_trip(h, w, c, seed):
    arr = make_rng(seed).normal(size=(h, w, c)).astype(np.float32).astype(np.float64)
    buf = io.encode_dmap(arr)
    assert buf[:4] == b"DMAP" and struct.unpack_from("<III", buf, 4) == (h, w, c)
    assert len(buf) == 16 + 4 * h * w * c
    assert np.array_equal(io.decode_dmap(buf), arr)


def test_dmap_channel_fastest():
    arr = np.arange(12, dtype=np.float64).reshape(2, 3, 2)
    vals = struct.unpack_from("<12f", io.encode_dmap(arr), 16)
    assert vals == tuple(range(12))
    with pytest.raises(ParseError):
        io.decode_dmap(io.encode_dmap(arr)[:-4])


def test_camera_json_round_trip(tmp_path):
    view = random_camera(make_rng(8), 32, 24)
    io.write_camera(tmp_path / "c.json", view)
    obj = json.loads((tmp_path / "c.json").read_text())
    assert set(obj) == {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}
    assert len(obj["rotation"]) == 9
    back = io.read_camera(tmp_path / "c.json")
    assert np.array_equal(back.rotation, view.rotation)
    assert np.array_equal(back.intrinsics, view.intrinsics)


def test_camera_json_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        io.read_camera(p)
    p.write_text(json.dumps({"fx": 1}))
    with pytest.raises(ParseError):
        io.read_camera(p)


def test_ppm_rounding():
    img = np.array([[[0.0, 1.0, 0.5 / 255], [1.5 / 255, 2.0, -1.0]]])
    buf = io.encode_ppm(img)
    assert buf.startswith(b"P6\n2 1\n255\n")
    assert list(buf[-6:]) == [0, 255, 1, 2, 255, 0]


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "x.bin", b"abc")
    assert [p.name for p in tmp_path.iterdir()] == ["x.bin"]
