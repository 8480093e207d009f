"""Brute-force scalar reference implementations.

These are deliberately naive nested loops over Python floats.  They only
use the domain containers (:class:`CameraView`, :class:`GaussianScene`)
and never call into the vectorized modules they are used to check.
Intended for small inputs (at most a few hundred pixels or primitives).
"""

from __future__ import annotations

import math

from .geometry import CameraView
from .scene import GaussianScene

SH_C0 = 0.28209479177387814


def _mat(m):
    return [[float(m[i][j]) for j in range(len(m[0]))] for i in range(len(m))]


def _matvec(m, v):
    return [sum(m[i][k] * v[k] for k in range(len(v))) for i in range(len(m))]


def _matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def _transpose(m):
    return [list(r) for r in zip(*m)]


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _cam(view: CameraView):
    K = _mat(view.intrinsics)
    return K[0][0], K[1][1], K[0][2], K[1][2], _mat(view.rotation), [float(t) for t in view.translation]


def _cos_dist_and_grads(a, b, eps=1e-12):
    na = math.sqrt(_dot(a, a))
    nb = math.sqrt(_dot(b, b))
    if na <= eps or nb <= eps:
        return 1.0, [0.0] * len(a), [0.0] * len(b)
    c = _dot(a, b) / (na * nb)
    ga = [-(b[i] / (na * nb) - c * a[i] / (na * na)) for i in range(len(a))]
    gb = [-(a[i] / (na * nb) - c * b[i] / (nb * nb)) for i in range(len(b))]
    return 1.0 - c, ga, gb


def _bilinear(h, w, u, v):
    """Taps of a bilinear sample at continuous (u, v); None if out of bounds."""
    x, y = u - 0.5, v - 0.5
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        return None
    x0 = min(int(math.floor(x)), max(w - 2, 0))
    y0 = min(int(math.floor(y)), max(h - 2, 0))
    ax, ay = x - x0, y - y0
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    return [(y0, x0, (1 - ax) * (1 - ay)), (y0, x1, ax * (1 - ay)),
            (y1, x0, (1 - ax) * ay), (y1, x1, ax * ay)]


def oracle_grid_sample(img, u, v):
    h, w, c = len(img), len(img[0]), len(img[0][0])
    taps = _bilinear(h, w, u, v)
    if taps is None:
        return None
    return [sum(wt * img[r][q][k] for r, q, wt in taps) for k in range(c)]


def oracle_warp(target: CameraView, context: CameraView, f_t, f_c, d_t, d_c, depth_tol=0.05):
    """Masked cosine warp distance, its gradients and the valid mask, pixel by pixel."""
    fxt, fyt, cxt, cyt, Rt, Tt = _cam(target)
    fxc, fyc, cxc, cyc, Rc, Tc = _cam(context)
    R = _matmul(Rc, _transpose(Rt))
    RTt = _matvec(R, Tt)
    T = [Tc[i] - RTt[i] for i in range(3)]
    h, w = len(f_t), len(f_t[0])
    hc, wc = len(f_c), len(f_c[0])
    D = len(f_t[0][0])

    valid = [[False] * w for _ in range(h)]
    terms = []
    for r in range(h):
        for q in range(w):
            d = float(d_t[r][q][0])
            if d <= 0:
                continue
            ray = [(q + 0.5 - cxt) / fxt, (r + 0.5 - cyt) / fyt, 1.0]
            p = [d * x for x in ray]
            pc = [a + b for a, b in zip(_matvec(R, p), T)]
            if pc[2] <= 1e-8:
                continue
            u = fxc * pc[0] / pc[2] + cxc
            v = fyc * pc[1] / pc[2] + cyc
            taps = _bilinear(hc, wc, u, v)
            if taps is None:
                continue
            dc = sum(wt * float(d_c[a][b][0]) for a, b, wt in taps)
            if not abs(pc[2] - dc) / pc[2] < depth_tol:
                continue
            valid[r][q] = True
            warped = [sum(wt * float(f_c[a][b][k]) for a, b, wt in taps) for k in range(D)]
            terms.append((r, q, taps, [float(x) for x in f_t[r][q]], warped))

    n = len(terms)
    g_t = [[[0.0] * D for _ in range(w)] for _ in range(h)]
    g_c = [[[0.0] * D for _ in range(wc)] for _ in range(hc)]
    if n == 0:
        return 0.0, g_t, g_c, valid
    total = 0.0
    for r, q, taps, a, b in terms:
        dist, ga, gb = _cos_dist_and_grads(a, b)
        total += dist
        for k in range(D):
            g_t[r][q][k] = ga[k] / n
        for a_, b_, wt in taps:
            for k in range(D):
                g_c[a_][b_][k] += wt * gb[k] / n
    return total / n, g_t, g_c, valid


def _voxel_cells(scene: GaussianScene, eps):
    cells = {}
    for g in range(len(scene)):
        key = tuple(int(math.ceil(float(scene.centers[g][i]) / eps)) for i in range(3))
        cells.setdefault(key, []).append(g)
    return cells


def _merge(scene: GaussianScene, members, weights):
    D = scene.feature_dim
    K = len(scene.sh[0])
    mu = [sum(wt * float(scene.centers[g][i]) for g, wt in zip(members, weights)) for i in range(3)]
    cov = [[0.0] * 3 for _ in range(3)]
    for g, wt in zip(members, weights):
        dmu = [float(scene.centers[g][i]) - mu[i] for i in range(3)]
        for i in range(3):
            for j in range(3):
                cov[i][j] += wt * (float(scene.covariances[g][i][j]) + dmu[i] * dmu[j])
    return {
        "center": mu,
        "covariance": cov,
        "sh": [[sum(wt * float(scene.sh[g][k][c]) for g, wt in zip(members, weights)) for c in range(3)]
               for k in range(K)],
        "opacity": sum(wt * float(scene.opacities[g]) for g, wt in zip(members, weights)),
        "feature": [sum(wt * float(scene.features[g][k]) for g, wt in zip(members, weights)) for k in range(D)],
        "confidence": sum(wt * float(scene.confidences[g]) for g, wt in zip(members, weights)),
    }


def oracle_voxelize(scene: GaussianScene, eps, lam):
    """Semantic-aware voxel merge; returns ``[(key, members, weights, merged)]`` sorted by key."""
    D = scene.feature_dim
    cells = _voxel_cells(scene, eps)
    result = []
    for key in sorted(cells):
        members = cells[key]
        proto = [sum(float(scene.features[g][k]) for g in members) / len(members) for k in range(D)]
        logits = []
        for g in members:
            d, _, _ = _cos_dist_and_grads([float(x) for x in scene.features[g]], proto)
            logits.append(float(scene.confidences[g]) - lam * d)
        peak = max(logits)
        ex = [math.exp(z - peak) for z in logits]
        s = sum(ex)
        weights = [e / s for e in ex]
        result.append((key, members, weights, _merge(scene, members, weights)))
    return result


def oracle_confidence_aggregate(scene: GaussianScene, eps):
    """Confidence-only voxel averaging (no semantic term), for the ``lam = 0`` baseline."""
    cells = _voxel_cells(scene, eps)
    result = []
    for key in sorted(cells):
        members = cells[key]
        conf = [float(scene.confidences[g]) for g in members]
        top = max(conf)
        ex = [math.exp(c - top) for c in conf]
        s = sum(ex)
        weights = [e / s for e in ex]
        result.append((key, members, weights, _merge(scene, members, weights)))
    return result


def oracle_attention(X, S, Wq, Wk, Wv):
    """Cross-attention output and attention matrix with explicit loops."""
    Q = _matmul(_mat(X), _mat(Wq))
    K = _matmul(_mat(S), _mat(Wk))
    V = _matmul(_mat(S), _mat(Wv))
    dk = len(Q[0])
    out, att = [], []
    for qi in Q:
        logits = [_dot(qi, kj) / math.sqrt(dk) for kj in K]
        m = max(logits)
        ex = [math.exp(z - m) for z in logits]
        s = sum(ex)
        a = [e / s for e in ex]
        att.append(a)
        out.append([sum(a[j] * V[j][c] for j in range(len(V))) for c in range(len(V[0]))])
    return out, att


def oracle_project_gaussian(view: CameraView, center, covariance):
    """EWA mean, low-passed 2D covariance and depth, or None if behind the near plane."""
    fx, fy, cx, cy, R, T = _cam(view)
    p = [a + b for a, b in zip(_matvec(R, [float(c) for c in center]), T)]
    x, y, z = p
    if z <= 0.01:
        return None
    J = [[fx / z, 0.0, -fx * x / (z * z)], [0.0, fy / z, -fy * y / (z * z)]]
    M = _matmul(J, R)
    C = _matmul(_matmul(M, _mat(covariance)), _transpose(M))
    C[0][0] += 0.3
    C[1][1] += 0.3
    C[0][1] = C[1][0] = 0.5 * (C[0][1] + C[1][0])
    return (fx * x / z + cx, fy * y / z + cy), C, z


def oracle_compositing(scene: GaussianScene, view: CameraView, u, v, background=(0.0, 0.0, 0.0)):
    """Composite one pixel (integer column ``u``, row ``v``) of a degree-0 scene.

    Returns a dict with the per-primitive weights (scene index -> weight),
    residual transmittance, color, feature, depth and alpha.
    """
    px, py = u + 0.5, v + 0.5
    hits = []
    for g in range(len(scene)):
        proj = oracle_project_gaussian(view, scene.centers[g], scene.covariances[g])
        if proj is None:
            continue
        (mx, my), C, z = proj
        det = C[0][0] * C[1][1] - C[0][1] * C[1][0]
        if not det >= 1e-12:
            continue
        rx, ry = 3.0 * math.sqrt(C[0][0]), 3.0 * math.sqrt(C[1][1])
        if not (mx + rx > 0 and mx - rx < view.width and my + ry > 0 and my - ry < view.height):
            continue
        dx, dy = px - mx, py - my
        power = (C[1][1] * dx * dx - 2.0 * C[0][1] * dx * dy + C[0][0] * dy * dy) / det
        if power > 9.0:
            continue
        g_val = min(math.exp(-0.5 * power), 0.99)
        hits.append((z, g, float(scene.opacities[g]) * g_val))
    hits.sort()
    D = scene.feature_dim
    T = 1.0
    weights = {}
    color = [0.0, 0.0, 0.0]
    feat = [0.0] * D
    depth = 0.0
    for z, g, a in hits:
        if T < 1e-4:
            break
        wgt = T * a
        weights[g] = wgt
        rgb = [max(SH_C0 * float(scene.sh[g][0][c]) + 0.5, 0.0) for c in range(3)]
        for c in range(3):
            color[c] += wgt * rgb[c]
        for k in range(D):
            feat[k] += wgt * float(scene.features[g][k])
        depth += wgt * z
        T *= 1.0 - a
    color = [color[c] + T * float(background[c]) for c in range(3)]
    return {"weights": weights, "transmittance": T, "color": color, "feature": feat,
            "depth": depth, "alpha": sum(weights.values())}
