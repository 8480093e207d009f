"""
Token-wise fusion with cross-attention
======================================

Geometry tokens query semantic tokens through one attention layer.  We
check the analytic backward pass against central finite differences and
look at two limiting cases.
"""

import numpy as np

from splatsem.fusion import FusionParams, attention_weights, fuse, fuse_backward
from splatsem.gradcheck import check_fuse
from splatsem.synth import make_rng

rng = make_rng(7)
X = rng.normal(size=(6, 8))   # geometry tokens
S = rng.normal(size=(10, 5))  # semantic tokens, a different width
params = FusionParams.random(rng, d=8, d_s=5, d_k=4, d_v=8)

out = fuse(X, S, params)
A = attention_weights(X, S, params)
print("output", out.shape, "attention", A.shape, "row sums", np.round(A.sum(axis=1), 15))

# %%
# With a zero query projection every logit is zero, so attention is
# uniform and every output row is the mean value vector.
flat = FusionParams(np.zeros_like(params.w_query), params.w_key, params.w_value)
print("uniform rows equal:", np.allclose(fuse(X, S, flat), (S @ params.w_value).mean(axis=0)))

# %%
# Gradients of sum(G * fuse(...)) for an arbitrary upstream G.
G = rng.normal(size=out.shape)
grads = fuse_backward(X, S, params, G)
print("gradient shapes:", {k: v.shape for k, v in vars(grads).items()})

# %%
# Finite-difference check over several random instances.
worst = {}
for seed in range(20):
    for name, err in check_fuse(make_rng(seed), n_tokens=6, dim=8, d_k=4).items():
        worst[name] = max(worst.get(name, 0.0), err)
for name, err in worst.items():
    print(f"  {name:9s} max relative error {err:.2e}")
