"""Token-wise fusion: one cross-attention layer, geometry tokens attending to semantic tokens.

    out = softmax((X Wq)(S Wk)^T / sqrt(d_k)) (S Wv)

Single head, no residual and no normalization.  ``fuse_backward`` gives
exact gradients for all five inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass
class FusionParams:
    w_query: np.ndarray  # (d, d_k)
    w_key: np.ndarray    # (d_s, d_k)
    w_value: np.ndarray  # (d_s, d_v)

    def __post_init__(self):
        self.w_query = np.asarray(self.w_query, dtype=np.float64)
        self.w_key = np.asarray(self.w_key, dtype=np.float64)
        self.w_value = np.asarray(self.w_value, dtype=np.float64)
        if self.w_query.ndim != 2 or self.w_key.ndim != 2 or self.w_value.ndim != 2:
            raise DimensionMismatch("projection matrices must be 2-D")
        if self.w_query.shape[1] != self.w_key.shape[1]:
            raise DimensionMismatch(
                f"query and key widths differ: {self.w_query.shape[1]} vs {self.w_key.shape[1]}")
        if self.w_key.shape[0] != self.w_value.shape[0]:
            raise DimensionMismatch("key and value projections must share the semantic input dimension")
        if self.d_k <= 0:
            raise DimensionMismatch("d_k must be positive")

    @property
    def d_k(self) -> int:
        return self.w_query.shape[1]

    @classmethod
    def random(cls, rng, d, d_s, d_k, d_v=None, scale=None):
        d_v = d if d_v is None else d_v
        s = (lambda n: 1.0 / np.sqrt(n)) if scale is None else (lambda n: scale)
        return cls(rng.normal(size=(d, d_k)) * s(d), rng.normal(size=(d_s, d_k)) * s(d_s),
                   rng.normal(size=(d_s, d_v)) * s(d_s))


@dataclass
class FusionGrads:
    geometry: np.ndarray
    semantic: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray


def _check(geometry, semantic, params):
    X = np.asarray(geometry, dtype=np.float64)
    S = np.asarray(semantic, dtype=np.float64)
    if X.ndim != 2 or S.ndim != 2:
        raise DimensionMismatch("token matrices must be 2-D (tokens x dim)")
    if X.shape[1] != params.w_query.shape[0]:
        raise DimensionMismatch(f"geometry dim {X.shape[1]} != W_Q rows {params.w_query.shape[0]}")
    if S.shape[1] != params.w_key.shape[0]:
        raise DimensionMismatch(f"semantic dim {S.shape[1]} != W_K rows {params.w_key.shape[0]}")
    if len(S) == 0:
        raise DimensionMismatch("at least one semantic token is required")
    return X, S


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(X, S, params):
    Q = X @ params.w_query
    K = S @ params.w_key
    V = S @ params.w_value
    A = _softmax_rows(Q @ K.T / np.sqrt(params.d_k))
    return Q, K, V, A


def attention_weights(geometry, semantic, params: FusionParams):
    """Row-stochastic ``(N_geometry, N_semantic)`` attention matrix."""
    X, S = _check(geometry, semantic, params)
    return _forward(X, S, params)[3]


def fuse(geometry, semantic, params: FusionParams):
    X, S = _check(geometry, semantic, params)
    _, _, V, A = _forward(X, S, params)
    return A @ V


def fuse_backward(geometry, semantic, params: FusionParams, upstream_grad) -> FusionGrads:
    """Gradients of ``sum(upstream_grad * fuse(...))`` with respect to every input."""
    X, S = _check(geometry, semantic, params)
    Q, K, V, A = _forward(X, S, params)
    G = np.asarray(upstream_grad, dtype=np.float64)
    if G.shape != (len(X), V.shape[1]):
        raise DimensionMismatch(f"upstream gradient must be {(len(X), V.shape[1])}, got {G.shape}")
    scale = 1.0 / np.sqrt(params.d_k)
    dV = A.T @ G
    dA = G @ V.T
    dZ = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    dQ = dZ @ K * scale
    dK = dZ.T @ Q * scale
    return FusionGrads(
        geometry=dQ @ params.w_query.T,
        semantic=dK @ params.w_key.T + dV @ params.w_value.T,
        w_query=X.T @ dQ,
        w_key=S.T @ dK,
        w_value=S.T @ dV,
    )
