"""Central finite differences and the relative-error measure used for gradient checks."""

from __future__ import annotations

import numpy as np

from .fusion import FusionParams, fuse, fuse_backward


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar ``f`` at array ``x`` (``x`` is restored afterwards)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-8):
    """``||a - n|| / max(||a||, ||n||)``; zero when both gradients are below ``floor``."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_fuse(rng, n_tokens=6, dim=8, d_k=4, h=1e-6):
    """Max relative error of every ``fuse_backward`` gradient on a random instance.

    Geometry and semantic inputs are both ``n_tokens x dim``; the value
    projection keeps ``dim`` columns.  Returns a dict keyed by input name.
    """
    X = rng.normal(size=(n_tokens, dim))
    S = rng.normal(size=(n_tokens, dim))
    params = FusionParams.random(rng, dim, dim, d_k)
    G = rng.normal(size=(n_tokens, dim))
    grads = fuse_backward(X, S, params, G)

    def loss(X_=X, S_=S, q=params.w_query, k=params.w_key, v=params.w_value):
        return float(np.sum(G * fuse(X_, S_, FusionParams(q, k, v))))

    numeric = {
        "geometry": numeric_grad(lambda a: loss(X_=a), X.copy(), h),
        "semantic": numeric_grad(lambda a: loss(S_=a), S.copy(), h),
        "w_query": numeric_grad(lambda a: loss(q=a), params.w_query.copy(), h),
        "w_key": numeric_grad(lambda a: loss(k=a), params.w_key.copy(), h),
        "w_value": numeric_grad(lambda a: loss(v=a), params.w_value.copy(), h),
    }
    return {name: rel_error(getattr(grads, name), num) for name, num in numeric.items()}
