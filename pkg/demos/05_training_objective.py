"""
The training objective and evaluation metrics
=============================================

Each loss term comes with an analytic gradient.  The total is the weighted
sum with the published weights.  The perceptual term is a pluggable
scorer that defaults to zero.
"""

import numpy as np

from splatsem.losses import (LossWeights, depth_distill_loss, feature_loss, pose_distill_loss, psnr, rgb_loss,
                             ssim, total_loss)
from splatsem.render import render
from splatsem.synth import SynthConfig, generate

scene = generate(seed=1, config=SynthConfig(image_size=64, spacing=0.03))
cam = scene.cameras[0]
target = render(scene.gaussians, cam)

# A degraded "prediction": drop every third Gaussian.
keep = np.arange(len(scene.gaussians)) % 3 != 0
pred = render(scene.gaussians.subset(keep), cam)

weights = LossWeights()
l_rgb, _ = rgb_loss(pred.color, target.color, lambda_lpips=weights.lambda_lpips)
l_feat, _ = feature_loss(pred.feature, target.feature)
confidence = target.alpha[..., 0]
l_depth, _, mask = depth_distill_loss(pred.depth[..., 0], target.depth[..., 0], confidence,
                                      weights.depth_mask_fraction)
poses = np.tile([1.0, 0, 0, 0, 0, 0, 0, 1.2], (4, 1))
l_pose, _ = pose_distill_loss(poses + 0.05, poses, weights.huber_delta)

report = total_loss(l_rgb, l_feat, 0.0, l_depth, l_pose, weights)
print(f"rgb {report.rgb:.4f}  feat {report.feat:.4f}  depth {report.depth:.4f} "
      f"(on {mask.mean():.0%} of pixels)  pose {report.pose:.5f}")
print(f"total {report.total:.4f}")
print("unit components with published weights:", total_loss(1, 1, 1, 1, 1).total)

# %%
print(f"PSNR {psnr(pred.color, target.color):.2f} dB, SSIM {ssim(pred.color, target.color):.4f}")
