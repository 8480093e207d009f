"""
Cross-view feature warping
==========================

Rendered feature maps of one scene should agree across views once target
pixels are lifted with their depth and re-projected into the other camera.
We measure that agreement with the masked cosine warp loss, then break it
by relabelling the classes in one view.
"""

import numpy as np

from splatsem.render import render
from splatsem.synth import SynthConfig, generate
from splatsem.warp import ViewBundle, warp_distance, warp_loss_total

scene = generate(seed=0, config=SynthConfig(n_cameras=6))
views = []
for i, cam in enumerate(scene.cameras[:3]):
    out = render(scene.gaussians, cam)
    views.append(ViewBundle(cam, out.feature, out.depth, name=f"cam{i}"))

# %%
# One directed term: how many pixels survive the in-bounds and
# depth-consistency checks, and the mean cosine distance over them.
t, c = views[0], views[1]
res = warp_distance(t.view, c.view, t.features, c.features, t.depth, c.depth, depth_tol=0.05)
print(f"valid pixels {res.mask.depth_consistent_count} of {res.mask.valid.size} "
      f"(in bounds {res.mask.in_bounds_count}); loss {res.loss:.4f}")

# %%
# Tightening the depth tolerance can only shrink the valid set.
for tol in (0.2, 0.05, 0.01, 0.002):
    r = warp_distance(t.view, c.view, t.features, c.features, t.depth, c.depth, depth_tol=tol)
    print(f"  depth_tol {tol:<6} valid {r.mask.depth_consistent_count:5d}  loss {r.loss:.4f}")

# %%
# Relabel every class k as k+1 in the context view.  Geometry is unchanged,
# so the same pixels are compared, but the features no longer match.
C = scene.class_features
shuffled = c.features @ C.T @ C[np.roll(np.arange(len(C)), -1)]
bad = warp_distance(t.view, c.view, t.features, shuffled, t.depth, c.depth)
print(f"shuffled classes: loss {bad.loss:.4f} ({bad.loss / res.loss:.0f}x the aligned loss)")

# %%
# The bidirectional total over all pairs of the three views.
pairs = [(views[a], views[b]) for a in range(3) for b in range(a + 1, 3)]
total = warp_loss_total(pairs)
for term in total.per_pair:
    print(f"  {term.target} <- {term.context}: {term.loss:.4f} over {term.valid_px} px")
print(f"total {total.loss:.4f}")
