"""Row-wise cosine distance with the zero-norm guard used by every loss."""

import numpy as np

NORM_EPS = 1e-12


def cosine_distance(a, b, eps=NORM_EPS):
    """``1 - cos(a, b)`` along the last axis; rows with a (near) zero vector give 1."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na > eps) & (nb > eps)
    cos = np.einsum("...i,...i->...", a, b) / np.where(ok, na * nb, 1.0)
    return 1.0 - np.where(ok, cos, 0.0)


def cosine_distance_grad(a, b, eps=NORM_EPS):
    """Distance and its gradients with respect to ``a`` and ``b``.

    Guarded rows (either norm below ``eps``) get zero gradients.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    ok = (na > eps) & (nb > eps)
    na = np.where(ok, na, 1.0)
    nb = np.where(ok, nb, 1.0)
    cos = np.einsum("...i,...i->...", a, b)[..., None] / (na * nb)
    cos = np.where(ok, cos, 0.0)
    grad_a = np.where(ok, -(b / (na * nb) - cos * a / na ** 2), 0.0)
    grad_b = np.where(ok, -(a / (na * nb) - cos * b / nb ** 2), 0.0)
    return 1.0 - cos[..., 0], grad_a, grad_b
