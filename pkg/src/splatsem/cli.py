"""Command-line entry point: ``splatsem <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors (nothing is written) and 1
when validated input fails during processing.  Subcommands given
``--json`` print exactly one JSON document on stdout.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import bench_render, bench_voxelize
from .errors import SplatSemError
from .fusion import FusionParams, attention_weights, fuse
from .gradcheck import check_fuse, numeric_grad, rel_error
from .losses import (LossWeights, depth_distill_loss, feature_loss, miou, pose_distill_loss, psnr, rgb_loss,
                     ssim, total_loss)
from .render import render
from .synth import SynthConfig, generate, make_rng, random_warp_instance
from .voxel import assign_voxels, fusion_weights, voxelize, weight_gradients
from .warp import DEFAULT_DEPTH_TOL, ViewBundle, warp_distance, warp_loss_total

log = logging.getLogger("splatsem")

SUBCOMMANDS = ("render", "voxelize", "warploss", "fuse", "gradcheck", "metrics", "totalloss", "synth", "bench")


def _floats(text, n=None):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _ints(text):
    try:
        vals = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return vals


def _at_least_5(text):
    v = int(text)
    if v < 5:
        raise argparse.ArgumentTypeError("benchmarks need at least 5 runs")
    return v


def _paths(text):
    return [Path(p) for p in text.split(",") if p]


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _emit(payload, as_json=True):
    if as_json:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        for k in sorted(payload):
            sys.stdout.write(f"{k}: {payload[k]}\n")


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SPLATSEM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer SPLATSEM_THREADS=%r", env)
    return 1


# -- subcommands -----------------------------------------------------------------

def cmd_render(args):
    scene = io.load_scene(args.scene)
    view = io.read_camera(args.camera)
    out = render(scene, view, background=args.bg, threads=_threads(args))
    io.write_ppm(args.out, out.color)
    if args.feature_out:
        io.write_dmap(args.feature_out, out.feature)
    if args.depth_out:
        io.write_dmap(args.depth_out, out.depth)
    if args.alpha_out:
        io.write_dmap(args.alpha_out, out.alpha)
    _emit({"width": view.width, "height": view.height, "n_primitives": len(scene),
           "n_visible": out.n_visible, "n_singular": out.n_singular,
           "mean_alpha": float(out.alpha.mean())}, args.json)


def cmd_voxelize(args):
    scene = io.load_scene(args.scene)
    compact, table = voxelize(scene, args.voxel_size, args.lambda_sem)
    stats = table.stats()
    io.save_scene(compact, args.out)
    if args.stats:
        io.atomic_write(args.stats, (json.dumps(stats, sort_keys=True, indent=2) + "\n").encode())
    _emit(stats, args.json)


def cmd_warploss(args):
    if not (len(args.views) == len(args.features) == len(args.depths)):
        raise SplatSemError("--views, --features and --depths need the same number of entries")
    if len(args.views) < 2:
        raise SplatSemError("warploss needs at least two views")
    bundles = [ViewBundle(io.read_camera(v), io.read_dmap(f), io.read_dmap(d), str(i))
               for i, (v, f, d) in enumerate(zip(args.views, args.features, args.depths))]
    pairs = list(itertools.combinations(bundles, 2))
    total = warp_loss_total(pairs, args.depth_tol)
    _emit({"loss": total.loss,
           "per_pair": [{"t": int(t.target), "c": int(t.context), "loss": t.loss, "valid_px": t.valid_px}
                        for t in total.per_pair]}, args.json)


def _matrix(path):
    m = io.read_dmap(path)
    if m.shape[2] != 1:
        raise SplatSemError(f"{path}: matrices are stored as rows x cols x 1 maps")
    return m[..., 0]


def cmd_fuse(args):
    params = FusionParams(_matrix(args.w_query), _matrix(args.w_key), _matrix(args.w_value))
    X, S = _matrix(args.geometry), _matrix(args.semantic)
    out = fuse(X, S, params)
    att = attention_weights(X, S, params)
    io.write_dmap(args.out, out[..., None])
    if args.attention_out:
        io.write_dmap(args.attention_out, att[..., None])
    _emit({"rows": int(out.shape[0]), "cols": int(out.shape[1]),
           "max_row_sum_error": float(np.abs(att.sum(axis=1) - 1).max())}, args.json)


def _gradcheck_once(op, rng, sizes, seed):
    if op == "fuse":
        n, d, dk = (sizes + [6, 8, 4][len(sizes):])[:3]
        return check_fuse(rng, n, d, dk)
    if op == "warp":
        size, dim = (sizes + [8, 4][len(sizes):])[:2]
        w = random_warp_instance(seed, size, dim)
        res = warp_distance(w.target, w.context, w.target_features, w.context_features,
                            w.target_depth, w.context_depth)
        ft, fc = w.target_features.copy(), w.context_features.copy()
        nt = numeric_grad(lambda a: warp_distance(w.target, w.context, a, fc, w.target_depth,
                                                  w.context_depth).loss, ft.copy())
        nc = numeric_grad(lambda a: warp_distance(w.target, w.context, ft, a, w.target_depth,
                                                  w.context_depth).loss, fc.copy())
        return {"target_features": rel_error(res.grad_target_features, nt),
                "context_features": rel_error(res.grad_context_features, nc)}
    if op == "feature":
        h, w, d = (sizes + [8, 8, 6][len(sizes):])[:3]
        a, b = rng.normal(size=(h, w, d)), rng.normal(size=(h, w, d))
        _, g = feature_loss(a, b)
        return {"rendered": rel_error(g, numeric_grad(lambda x: feature_loss(x, b)[0], a.copy()))}
    if op == "rgb":
        h, w = (sizes + [8, 8][len(sizes):])[:2]
        a, b = rng.uniform(size=(h, w, 3)), rng.uniform(size=(h, w, 3))

        def quad(r, t):
            return float(np.sum((r - t) ** 2)), 2 * (r - t)

        _, g = rgb_loss(a, b, quad)
        return {"rendered": rel_error(g, numeric_grad(lambda x: rgb_loss(x, b, quad)[0], a.copy()))}
    if op == "depth":
        h, w = (sizes + [8, 8][len(sizes):])[:2]
        a, b, c = rng.uniform(1, 3, size=(h, w)), rng.uniform(1, 3, size=(h, w)), rng.uniform(size=(h, w))
        _, g, _ = depth_distill_loss(a, b, c, 0.5)
        return {"rendered": rel_error(g, numeric_grad(lambda x: depth_distill_loss(x, b, c, 0.5)[0], a.copy()))}
    if op == "pose":
        n, p = (sizes + [4, 8][len(sizes):])[:2]
        a, b = rng.normal(size=(n, p)), rng.normal(size=(n, p))
        _, g = pose_distill_loss(a, b, 1.0)
        return {"pred": rel_error(g, numeric_grad(lambda x: pose_distill_loss(x, b, 1.0)[0], a.copy()))}
    if op == "weights":
        from .scene import GaussianScene
        m, d = (sizes + [4, 6][len(sizes):])[:2]
        feats = rng.normal(size=(m, d))
        centers = np.full((m, 3), 0.5)

        def table_for(f):
            sc = GaussianScene(centers, np.broadcast_to(np.eye(3) * 1e-3, (m, 3, 3)), np.zeros((m, 1, 3)),
                               np.full(m, 0.5), f, np.linspace(0, 1, m))
            return sc, fusion_weights(assign_voxels(sc, 1.0), sc, 2.0)

        sc, tab = table_for(feats)
        jac = weight_gradients(sc, tab, 2.0)[0]
        errs = []
        for i in range(m):
            num = numeric_grad(lambda f: table_for(f)[1].member_weights()[i], feats.copy())
            errs.append(rel_error(jac[i], num))
        return {"features": max(errs)}
    raise SplatSemError(f"unknown gradcheck op {op!r}")


def cmd_gradcheck(args):
    worst = {}
    for t in range(args.trials):
        seed = args.seed + t
        errs = _gradcheck_once(args.op, make_rng(seed), list(args.sizes or []), seed)
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    _emit({"op": args.op, "seed": args.seed, "trials": args.trials, "max_rel_error": worst,
           "pass": all(v < 1e-4 for v in worst.values())}, args.json)


def cmd_metrics(args):
    pred, gt = io.read_dmap(args.pred), io.read_dmap(args.gt)
    if args.kind == "psnr":
        value = psnr(pred, gt)
    elif args.kind == "ssim":
        value = ssim(pred, gt)
    else:
        p = np.rint(pred[..., 0]).astype(np.int64)
        g = np.rint(gt[..., 0]).astype(np.int64)
        n = args.n_classes if args.n_classes else int(max(g.max(initial=-1), p.max(initial=-1)) + 1)
        value = miou(p, g, n)
    _emit({"kind": args.kind, "value": value}, args.json)


def cmd_totalloss(args):
    weights = LossWeights()
    if args.config:
        try:
            weights = LossWeights.from_dict(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise SplatSemError(f"{args.config}: invalid JSON ({exc.msg})") from None
    rep = total_loss(args.rgb, args.feat, args.warp, args.depth, args.pose, weights)
    _emit({"rgb": rep.rgb, "feat": rep.feat, "warp": rep.warp, "depth": rep.depth, "pose": rep.pose,
           "total": rep.total, "weights": weights.to_dict()}, args.json)


def cmd_synth(args):
    config = SynthConfig()
    if args.config:
        try:
            config = SynthConfig.from_dict(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise SplatSemError(f"{args.config}: invalid JSON ({exc.msg})") from None
    scene = generate(args.seed, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_scene(scene.gaussians, out / "scene.fgsc")
    for i, (cam, labels) in enumerate(zip(scene.cameras, scene.labels)):
        io.write_camera(out / f"cam_{i}.json", cam)
        io.write_dmap(out / f"labels_{i}.dmap", labels[..., None].astype(np.float64))
    io.write_dmap(out / "class_features.dmap", scene.class_features[..., None])
    io.atomic_write(out / "config.json", (json.dumps({"seed": args.seed, **config.to_dict()},
                                                     sort_keys=True, indent=2) + "\n").encode())
    _emit({"n_primitives": len(scene.gaussians), "n_cameras": len(scene.cameras),
           "out_dir": str(out)}, args.json)


def cmd_bench(args):
    if args.op == "render":
        rep = bench_render(args.n or 10_000, args.size, args.dim, args.repeats, args.seed, _threads(args))
    else:
        rep = bench_voxelize(args.n or 1_000_000, args.voxel_size, args.lambda_sem, args.dim, args.repeats,
                             args.seed)
    _emit(rep.to_dict(), True)


# -- parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $SPLATSEM_THREADS or 1); outputs do not depend on it")
    common.add_argument("--json", action="store_true", help="print a single JSON document on stdout")

    parser = argparse.ArgumentParser(prog="splatsem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("render", parents=[common], help="render a scene file from a camera")
    p.add_argument("--scene", required=True, type=Path)
    p.add_argument("--camera", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="binary PPM color image")
    p.add_argument("--feature-out", type=Path)
    p.add_argument("--depth-out", type=Path)
    p.add_argument("--alpha-out", type=Path)
    p.add_argument("--bg", type=lambda s: _floats(s, 3), default=[0.0, 0.0, 0.0], help="background r,g,b")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("voxelize", parents=[common], help="semantic-aware voxel compaction")
    p.add_argument("--scene", required=True, type=Path)
    p.add_argument("--voxel-size", type=_positive, default=0.25)
    p.add_argument("--lambda", dest="lambda_sem", type=_nonneg, default=2.0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--stats", type=Path)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("warploss", parents=[common], help="bidirectional feature warping loss over all view pairs")
    p.add_argument("--views", required=True, type=_paths)
    p.add_argument("--features", required=True, type=_paths)
    p.add_argument("--depths", required=True, type=_paths)
    p.add_argument("--depth-tol", type=_positive, default=DEFAULT_DEPTH_TOL)
    p.set_defaults(func=cmd_warploss)

    p = sub.add_parser("fuse", parents=[common], help="token-wise fusion cross-attention")
    for name in ("geometry", "semantic", "w-query", "w-key", "w-value"):
        p.add_argument(f"--{name}", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--attention-out", type=Path)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of analytic gradients")
    p.add_argument("--op", required=True, choices=("fuse", "warp", "feature", "rgb", "depth", "pose", "weights"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=_ints, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", parents=[common], help="PSNR, SSIM or mIoU between two maps")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--kind", required=True, choices=("psnr", "ssim", "miou"))
    p.add_argument("--n-classes", type=int, default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("totalloss", parents=[common], help="weighted training objective")
    p.add_argument("--config", type=Path, help="JSON with LossWeights fields")
    for name in ("rgb", "feat", "warp", "depth", "pose"):
        p.add_argument(f"--{name}", type=float, default=0.0)
    p.set_defaults(func=cmd_totalloss)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic multi-view scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", parents=[common], help="time render or voxelize")
    p.add_argument("--op", required=True, choices=("render", "voxelize"))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--voxel-size", type=_positive, default=0.25)
    p.add_argument("--lambda", dest="lambda_sem", type=_nonneg, default=2.0)
    p.add_argument("--repeats", type=_at_least_5, default=5, help="timed runs; the median is reported (>= 5)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        args.func(args)
    except (SplatSemError, ValueError, OSError) as exc:
        print(f"splatsem {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
