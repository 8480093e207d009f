import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatsem.errors import EmptyMask, LengthMismatch, NonFiniteComponent, ShapeMismatch
from splatsem.gradcheck import numeric_grad, rel_error
from splatsem.losses import (LossWeights, confidence_mask, depth_distill_loss, feature_loss, miou,
                             pose_distill_loss, psnr, rgb_loss, ssim, total_loss)
from splatsem.synth import make_rng

from conftest import assert_close


def quad_scorer(r, t):
    return float(np.sum((r - t) ** 2)), 2 * (r - t)


def test_rgb_loss_values_and_gradient():
    z, o = np.zeros((4, 4, 3)), np.ones((4, 4, 3))
    assert rgb_loss(z, z)[0] == 0.0
    assert rgb_loss(z, o)[0] == 1.0
    rng = make_rng(0)
    a, b = rng.uniform(size=(6, 5, 3)), rng.uniform(size=(6, 5, 3))
    loss, g = rgb_loss(a, b, quad_scorer, 0.05)
    assert loss == pytest.approx(np.abs(a - b).mean() + 0.05 * np.sum((a - b) ** 2), rel=1e-14)
    num = numeric_grad(lambda x: rgb_loss(x, b, quad_scorer, 0.05)[0], a.copy())
    assert rel_error(g, num) < 1e-4
    with pytest.raises(ShapeMismatch):
        rgb_loss(a, b[:5])
    with pytest.raises(ShapeMismatch):
        rgb_loss(a[..., :2], b[..., :2])


def test_feature_loss_cases_and_oracle():
    rng = make_rng(1)
    f = rng.normal(size=(8, 8, 6))
    f /= np.linalg.norm(f, axis=-1, keepdims=True)
    assert feature_loss(f, f)[0] == pytest.approx(0.0, abs=1e-15)
    e1 = np.zeros((3, 3, 2))
    e1[..., 0] = 1
    e2 = e1[..., ::-1]
    assert feature_loss(e1, e2)[0] == 1.0
    a, b = rng.normal(size=(8, 8, 6)), rng.normal(size=(8, 8, 6))
    ref = 0.0
    for i in range(8):
        for j in range(8):
            x, y = a[i, j].tolist(), b[i, j].tolist()
            dot = sum(p * q for p, q in zip(x, y))
            ref += 1 - dot / (math.sqrt(sum(p * p for p in x)) * math.sqrt(sum(q * q for q in y)))
    loss, g = feature_loss(a, b)
    assert loss == pytest.approx(ref / 64, abs=1e-12)
    assert rel_error(g, numeric_grad(lambda x: feature_loss(x, b)[0], a.copy())) < 1e-4


def test_confidence_mask_ties_and_fraction():
    c = np.array([[3.0, 1.0], [2.0, 2.0]])
    assert confidence_mask(c, 0.5).tolist() == [[True, False], [True, True]]
    assert confidence_mask(c, 0.25).tolist() == [[True, False], [False, False]]
    assert confidence_mask(c, 1.0).all()
    with pytest.raises(EmptyMask):
        confidence_mask(np.full((2, 2), np.nan), 0.5)


def test_depth_loss_cases():
    rng = make_rng(2)
    d = rng.uniform(1, 3, size=(5, 5))
    c = rng.uniform(size=(5, 5))
    assert depth_distill_loss(d, d, c, 1.0)[0] == 0.0
    assert depth_distill_loss(d, d + 1, c, 1.0)[0] == 1.0
    with pytest.raises(ShapeMismatch):
        depth_distill_loss(d, d[:4], c, 1.0)
    with pytest.raises(ValueError):
        depth_distill_loss(d, d, c, 0.0)


def test_depth_loss_matches_sort_oracle():
    rng = make_rng(3)
    r, p, c = rng.uniform(1, 3, size=(8, 8)), rng.uniform(1, 3, size=(8, 8)), rng.uniform(size=(8, 8))
    loss, g, mask = depth_distill_loss(r, p, c, 0.5)
    flat = sorted(range(64), key=lambda i: (-c.flat[i], i))[:32]
    ref = sum((p.flat[i] - r.flat[i]) ** 2 for i in flat) / 32
    assert loss == pytest.approx(ref, abs=1e-12)
    assert sorted(np.flatnonzero(mask)) == sorted(flat)
    assert not g[~mask].any()
    assert rel_error(g, numeric_grad(lambda x: depth_distill_loss(x, p, c, 0.5)[0], r.copy())) < 1e-4


def test_pose_loss_cases():
    p = make_rng(4).normal(size=(3, 8))
    assert pose_distill_loss(p, p)[0] == 0.0
    q = p.copy()
    q[1, 2] += 0.7
    assert pose_distill_loss(p, q, 0.7)[0] == pytest.approx(0.7 ** 2 / 2 / 3, abs=1e-15)
    with pytest.raises(LengthMismatch):
        pose_distill_loss(p, p[:2])


def test_pose_loss_oracle_and_gradient():
    rng = make_rng(5)
    p = rng.normal(size=(4, 8))
    r = rng.choice([-1, 1], size=(4, 8)) * rng.uniform(0.1, 2.5, size=(4, 8))
    r[np.abs(np.abs(r) - 1.0) < 0.05] += 0.2  # stay off the knee
    q = p + r

    def hub(x, d=1.0):
        return 0.5 * x * x if abs(x) <= d else d * (abs(x) - 0.5 * d)

    ref = sum(hub(float(x)) for x in r.ravel()) / 4
    loss, g = pose_distill_loss(p, q, 1.0)
    assert loss == pytest.approx(ref, abs=1e-12)
    assert rel_error(g, numeric_grad(lambda x: pose_distill_loss(x, q, 1.0)[0], p.copy())) < 1e-4


def test_total_loss_paper_weights():
    assert total_loss(0, 0, 0, 0, 0).total == 0.0
    assert total_loss(1, 1, 1, 1, 1).total == 12.2
    w = LossWeights()
    assert (w.lambda_lpips, w.lambda_feat, w.lambda_warp, w.lambda_depth, w.lambda_pose) == (0.05, 0.1, 0.1, 1.0, 10.0)
    with pytest.raises(NonFiniteComponent):
        total_loss(1, float("nan"), 0, 0, 0)


@settings(max_examples=50, deadline=None)
@given(c=st.lists(st.floats(0, 100), min_size=5, max_size=5), k=st.integers(0, 4), delta=st.floats(0, 10))
def test_total_loss_linear_in_each_component(c, k, delta):
    w = LossWeights()
    scale = [1.0, w.lambda_feat, w.lambda_warp, w.lambda_depth, w.lambda_pose]
    base = total_loss(*c, w).total
    assert base == pytest.approx(sum(s * x for s, x in zip(scale, c)), abs=1e-12 * max(1, base))
    bumped = list(c)
    bumped[k] += delta
    diff = total_loss(*bumped, w).total - base
    assert diff == pytest.approx(scale[k] * delta, abs=1e-9)


def test_total_loss_scales_gradients():
    g = {"feat": np.ones(3), "pose": np.full(2, 2.0)}
    rep = total_loss(1, 1, 1, 1, 1, grads=g)
    assert_close(rep.grads["feat"], np.full(3, 0.1), 1e-16)
    assert_close(rep.grads["pose"], np.full(2, 20.0), 0)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_feat=-1)
    with pytest.raises(ValueError):
        LossWeights(depth_mask_fraction=0)
    with pytest.raises(ValueError):
        LossWeights.from_dict({"lambda_bogus": 1})
    assert LossWeights.from_dict(LossWeights().to_dict()) == LossWeights()


def test_losses_nonnegative_zero_on_identical():
    rng = make_rng(6)
    a = rng.uniform(size=(6, 6, 3))
    for loss in (rgb_loss(a, a)[0], feature_loss(a, a)[0], depth_distill_loss(a[..., 0], a[..., 0], a[..., 1])[0],
                 pose_distill_loss(a[0], a[0])[0]):
        assert loss == pytest.approx(0.0, abs=1e-15)


def test_psnr_values():
    z = np.zeros((8, 8, 3))
    assert psnr(z, z) == 99.0
    assert psnr(z, z + 0.1) == pytest.approx(20.0, abs=1e-12)


def test_ssim_against_reference_implementation():
    skm = pytest.importorskip("skimage.metrics")
    rng = make_rng(7)
    a = rng.uniform(size=(32, 30, 3))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    ref = skm.structural_similarity(a, b, data_range=1.0, channel_axis=2, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        ssim(a[:5, :5], b[:5, :5])


def test_miou_matches_confusion_oracle():
    rng = make_rng(8)
    gt = rng.integers(-1, 5, size=(20, 20))
    pred = rng.integers(0, 5, size=(20, 20))
    ious = []
    for k in range(5):
        g, p = gt == k, pred == k
        valid = gt >= 0
        if not g.any():
            continue
        tp = np.sum(g & p)
        fp = np.sum(p & ~g & valid)
        fn = np.sum(g & ~p)
        ious.append(tp / (tp + fp + fn))
    assert miou(pred, gt, 5) == pytest.approx(np.mean(ious), abs=1e-12)
    assert miou(gt, gt, 5) == 1.0
    with pytest.raises(ShapeMismatch):
        miou(pred[:3], gt, 5)
