import json
import subprocess
import sys

import numpy as np
import pytest

from splatsem import io
from splatsem.cli import SUBCOMMANDS, main
from splatsem.synth import make_rng

SMALL = {"image_size": 32, "spacing": 0.05, "n_cameras": 3}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture
def scene_dir(tmp_path, capsys):
    (tmp_path / "synth.json").write_text(json.dumps(SMALL))
    d = tmp_path / "scene0"
    info = run_json(capsys, "synth", "--seed", 0, "--config", tmp_path / "synth.json", "--out-dir", d)
    assert info["n_cameras"] == 3
    return d


def test_help_lists_every_subcommand():
    res = subprocess.run([sys.executable, "-m", "splatsem.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in SUBCOMMANDS:
        assert name in res.stdout


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_usage_error_writes_nothing(tmp_path, scene_dir):
    out = tmp_path / "x.fgsc"
    with pytest.raises(SystemExit) as exc:
        main(["voxelize", "--scene", str(scene_dir / "scene.fgsc"), "--voxel-size", "-1", "--out", str(out)])
    assert exc.value.code == 2
    assert not out.exists()
    with pytest.raises(SystemExit) as exc:
        main(["render", "--scene", "s", "--camera", "c", "--out", str(out), "--bg", "1,2"])
    assert exc.value.code == 2


def test_processing_error_exit_1(tmp_path, capsys, scene_dir):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    out = tmp_path / "r.ppm"
    code, stdout, err = run(capsys, "render", "--scene", scene_dir / "scene.fgsc", "--camera", bad, "--out", out)
    assert code == 1 and "error" in err and stdout == ""
    assert not out.exists()
    code, _, _ = run(capsys, "voxelize", "--scene", tmp_path / "missing.fgsc", "--out", out)
    assert code == 1


def test_synth_outputs(scene_dir):
    names = sorted(p.name for p in scene_dir.iterdir())
    assert names == ["cam_0.json", "cam_1.json", "cam_2.json", "class_features.dmap", "config.json",
                     "labels_0.dmap", "labels_1.dmap", "labels_2.dmap", "scene.fgsc"]
    labels = io.read_dmap(scene_dir / "labels_0.dmap")
    assert labels.shape == (32, 32, 1) and labels.min() >= -1


def test_pipeline_and_byte_stability(tmp_path, capsys, scene_dir):
    s, c = scene_dir / "scene.fgsc", scene_dir / "cam_0.json"
    info = run_json(capsys, "render", "--scene", s, "--camera", c, "--out", tmp_path / "a.ppm",
                    "--feature-out", tmp_path / "a_f.dmap", "--depth-out", tmp_path / "a_d.dmap")
    assert info["width"] == 32 and info["n_visible"] > 0
    run_json(capsys, "render", "--scene", s, "--camera", c, "--out", tmp_path / "b.ppm",
             "--feature-out", tmp_path / "b_f.dmap", "--depth-out", tmp_path / "b_d.dmap", "--threads", 4)
    for x in ("ppm", "_f.dmap", "_d.dmap"):
        sep = "." if x == "ppm" else ""
        assert (tmp_path / f"a{sep}{x}").read_bytes() == (tmp_path / f"b{sep}{x}").read_bytes()
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n32 32\n255\n")

    stats = run_json(capsys, "voxelize", "--scene", s, "--voxel-size", 0.1, "--lambda", 2.0,
                     "--out", tmp_path / "v.fgsc", "--stats", tmp_path / "stats.json")
    assert set(stats) == {"n_in", "n_out", "cells", "mean_members", "max_members"}
    assert json.loads((tmp_path / "stats.json").read_text()) == stats
    first = (tmp_path / "v.fgsc").read_bytes()
    run_json(capsys, "voxelize", "--scene", s, "--voxel-size", 0.1, "--out", tmp_path / "v.fgsc")
    assert (tmp_path / "v.fgsc").read_bytes() == first

    run(capsys, "render", "--scene", tmp_path / "v.fgsc", "--camera", c, "--out", tmp_path / "v.ppm",
        "--feature-out", tmp_path / "v_f.dmap")
    # metrics compares DMAP files, so store full-precision color renders
    from splatsem.render import render
    orig = render(io.load_scene(s), io.read_camera(c)).color
    comp = render(io.load_scene(tmp_path / "v.fgsc"), io.read_camera(c)).color
    io.write_dmap(tmp_path / "o.dmap", orig)
    io.write_dmap(tmp_path / "c.dmap", comp)
    m = run_json(capsys, "metrics", "--pred", tmp_path / "c.dmap", "--gt", tmp_path / "o.dmap", "--kind", "psnr")
    assert m["kind"] == "psnr" and 15 < m["value"] < 99
    m = run_json(capsys, "metrics", "--pred", tmp_path / "c.dmap", "--gt", tmp_path / "o.dmap", "--kind", "ssim")
    assert 0 < m["value"] <= 1


def test_warploss(tmp_path, capsys, scene_dir):
    s = io.load_scene(scene_dir / "scene.fgsc")
    from splatsem.render import render
    views, feats, depths = [], [], []
    for i in range(3):
        cam = io.read_camera(scene_dir / f"cam_{i}.json")
        out = render(s, cam)
        io.write_dmap(tmp_path / f"f{i}.dmap", out.feature)
        io.write_dmap(tmp_path / f"d{i}.dmap", out.depth)
        views.append(str(scene_dir / f"cam_{i}.json"))
        feats.append(str(tmp_path / f"f{i}.dmap"))
        depths.append(str(tmp_path / f"d{i}.dmap"))
    argv = ["warploss", "--views", ",".join(views), "--features", ",".join(feats), "--depths", ",".join(depths),
            "--depth-tol", "0.05", "--json"]
    code, out1, _ = run(capsys, *argv)
    assert code == 0
    res = json.loads(out1)
    assert len(res["per_pair"]) == 6
    assert {(p["t"], p["c"]) for p in res["per_pair"]} == {(a, b) for a in range(3) for b in range(3) if a != b}
    assert res["loss"] == pytest.approx(sum(p["loss"] for p in res["per_pair"]), abs=1e-12)
    _, out2, _ = run(capsys, *argv)
    assert out1 == out2
    code, _, _ = run(capsys, "warploss", "--views", views[0], "--features", feats[0], "--depths", depths[0])
    assert code == 1


def test_fuse_and_gradcheck(tmp_path, capsys):
    rng = make_rng(0)
    mats = {"geometry": rng.normal(size=(6, 8)), "semantic": rng.normal(size=(5, 7)),
            "w-query": rng.normal(size=(8, 4)), "w-key": rng.normal(size=(7, 4)), "w-value": rng.normal(size=(7, 3))}
    argv = ["fuse"]
    for k, v in mats.items():
        io.write_dmap(tmp_path / f"{k}.dmap", v[..., None])
        argv += [f"--{k}", tmp_path / f"{k}.dmap"]
    info = run_json(capsys, *argv, "--out", tmp_path / "o.dmap", "--attention-out", tmp_path / "a.dmap")
    assert (info["rows"], info["cols"]) == (6, 3)
    assert info["max_row_sum_error"] < 1e-6
    att = io.read_dmap(tmp_path / "a.dmap")[..., 0]
    assert np.allclose(att.sum(1), 1, atol=1e-6)

    g = run_json(capsys, "gradcheck", "--op", "fuse", "--seed", 7, "--sizes", "6,8,4")
    assert set(g["max_rel_error"]) == {"geometry", "semantic", "w_query", "w_key", "w_value"}
    assert g["pass"] and max(g["max_rel_error"].values()) < 1e-4
    for op in ("warp", "feature", "rgb", "depth", "pose", "weights"):
        assert run_json(capsys, "gradcheck", "--op", op, "--seed", 1)["pass"]


def test_totalloss(tmp_path, capsys):
    r = run_json(capsys, "totalloss", "--rgb", 1, "--feat", 1, "--warp", 1, "--depth", 1, "--pose", 1)
    assert r["total"] == 12.2
    (tmp_path / "w.json").write_text(json.dumps({"lambda_pose": 0.0}))
    r = run_json(capsys, "totalloss", "--config", tmp_path / "w.json", "--rgb", 1, "--pose", 5)
    assert r["total"] == 1.0 and r["weights"]["lambda_pose"] == 0.0
    (tmp_path / "bad.json").write_text(json.dumps({"lambda_zzz": 1.0}))
    code, _, _ = run(capsys, "totalloss", "--config", tmp_path / "bad.json", "--json")
    assert code == 1


def test_metrics_miou(tmp_path, capsys):
    gt = np.array([[0, 1], [1, -1]], dtype=float)[..., None]
    pred = np.array([[0, 1], [0, 1]], dtype=float)[..., None]
    io.write_dmap(tmp_path / "g.dmap", gt)
    io.write_dmap(tmp_path / "p.dmap", pred)
    m = run_json(capsys, "metrics", "--pred", tmp_path / "p.dmap", "--gt", tmp_path / "g.dmap", "--kind", "miou",
                 "--n-classes", 2)
    assert m["value"] == pytest.approx((0.5 + 0.5) / 2)


def test_bench_schema(capsys, monkeypatch):
    monkeypatch.setenv("SPLATSEM_THREADS", "2")
    r = run_json(capsys, "bench", "--op", "voxelize", "--n", 100000, "--voxel-size", 0.25, "--lambda", 2,
                 "--repeats", 5)
    assert set(r) == {"op", "size", "wall_ms", "throughput", "unit", "runs"}
    assert r["op"] == "voxelize" and r["size"]["n"] == 100000 and r["runs"] == 5
    assert r["wall_ms"] > 0 and r["throughput"] > 0
    r = run_json(capsys, "bench", "--op", "render", "--n", 500, "--size", 32)
    assert r["unit"] == "pixels/s"
    with pytest.raises(SystemExit):
        main(["bench", "--op", "render", "--repeats", "3"])
