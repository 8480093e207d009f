"""Semantic-aware voxelization of a Gaussian scene.

Gaussians are bucketed by ``ceil(center / voxel_size)``.  Inside each
voxel every member gets a softmax weight over ``confidence - lam * d``,
where ``d`` is the cosine distance of its feature to the voxel's mean
feature (the prototype); attributes are then merged with those weights.
With ``lam = 0`` this reduces to confidence-only weighted averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cosine import cosine_distance, cosine_distance_grad
from .errors import NonPositiveVoxelSize
from .scene import GaussianScene

DEFAULT_LAMBDA = 2.0


@dataclass
class VoxelTable:
    """Partition of scene indices into voxels, stored in CSR form.

    ``members[offsets[s]:offsets[s+1]]`` are the (ascending) scene indices
    of cell ``s``, whose integer key is ``keys[s]``; cells are sorted by
    key.  ``cell_of[g]`` is the cell of primitive ``g``.  ``weights`` is
    aligned with ``members`` and is ``None`` until
    :func:`fusion_weights` fills it.
    """

    voxel_size: float
    keys: np.ndarray
    offsets: np.ndarray
    members: np.ndarray
    cell_of: np.ndarray
    prototypes: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.keys)

    @property
    def counts(self):
        return np.diff(self.offsets)

    def cell(self, s):
        """``(key, member indices, prototype, weights or None)`` of cell ``s``."""
        sl = slice(self.offsets[s], self.offsets[s + 1])
        w = None if self.weights is None else self.weights[sl]
        return tuple(self.keys[s]), self.members[sl], self.prototypes[s], w

    def cells(self):
        for s in range(len(self)):
            yield self.cell(s)

    def member_weights(self):
        """Weights indexed by scene index instead of CSR position."""
        out = np.empty(len(self.members))
        out[self.members] = self.weights
        return out

    def stats(self) -> dict:
        counts = self.counts
        return {
            "n_in": int(len(self.members)),
            "n_out": int(len(self.keys)),
            "cells": int(len(self.keys)),
            "mean_members": float(counts.mean()) if len(counts) else 0.0,
            "max_members": int(counts.max()) if len(counts) else 0,
        }


def voxel_keys(centers, voxel_size: float):
    if not voxel_size > 0:
        raise NonPositiveVoxelSize(f"voxel size must be positive, got {voxel_size}")
    return np.ceil(np.asarray(centers, dtype=np.float64) / voxel_size).astype(np.int64)


def _group_keys(keys):
    """Unique rows (lexicographic) and the inverse map."""
    if len(keys) == 0:
        return keys.reshape(0, 3), np.zeros(0, dtype=np.int64)
    lo = keys.min(axis=0)
    span = keys.max(axis=0) - lo + 1
    if np.prod(span.astype(np.float64)) < 2.0 ** 62:
        shifted = keys - lo
        packed = (shifted[:, 0] * span[1] + shifted[:, 1]) * span[2] + shifted[:, 2]
        uniq, inverse = np.unique(packed, return_inverse=True)
        ux = uniq // (span[1] * span[2])
        rem = uniq % (span[1] * span[2])
        ukeys = np.stack([ux, rem // span[2], rem % span[2]], axis=1) + lo
        return ukeys, inverse.reshape(-1)
    ukeys, inverse = np.unique(keys, axis=0, return_inverse=True)
    return ukeys, inverse.reshape(-1)


def _segment_sum(values, offsets):
    """Per-cell sums over CSR-ordered rows, accumulated in member order."""
    if len(values) == 0:
        return np.zeros((len(offsets) - 1,) + values.shape[1:])
    return np.add.reduceat(values, offsets[:-1], axis=0)


def assign_voxels(scene: GaussianScene, voxel_size: float) -> VoxelTable:
    keys = voxel_keys(scene.centers, voxel_size)
    ukeys, cell_of = _group_keys(keys)
    members = np.argsort(cell_of, kind="stable")
    counts = np.bincount(cell_of, minlength=len(ukeys))
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    prototypes = _segment_sum(scene.features[members], offsets) / np.maximum(counts, 1)[:, None]
    return VoxelTable(float(voxel_size), ukeys, offsets, members, cell_of, prototypes)


def semantic_distances(table: VoxelTable, scene: GaussianScene):
    """Cosine distance of every primitive's feature to its voxel prototype (scene order)."""
    return cosine_distance(scene.features, table.prototypes[table.cell_of])


def fusion_weights(table: VoxelTable, scene: GaussianScene, lambda_sem: float = DEFAULT_LAMBDA) -> VoxelTable:
    """Fill ``table.weights`` with the per-voxel softmax of ``confidence - lambda_sem * d``."""
    if lambda_sem < 0:
        raise ValueError(f"lambda_sem must be non-negative, got {lambda_sem}")
    d = semantic_distances(table, scene)
    logits = (scene.confidences - lambda_sem * d)[table.members]
    if len(logits):
        peak = np.maximum.reduceat(logits, table.offsets[:-1])
        e = np.exp(logits - np.repeat(peak, table.counts))
        w = e / np.repeat(_segment_sum(e, table.offsets), table.counts)
    else:
        w = np.zeros(0)
    table.weights = w
    return table


def aggregate(scene: GaussianScene, table: VoxelTable) -> GaussianScene:
    """Merge each voxel into one Gaussian using the fusion weights.

    Centers, SH coefficients, opacity, features and confidence are weighted
    sums.  The covariance is moment matched,
    ``sum w (cov_g + (mu_g - mu)(mu_g - mu)^T)``, so the merged Gaussian
    keeps the mixture's spread and stays PSD.
    """
    if table.weights is None:
        raise ValueError("fusion weights are not set; call fusion_weights first")
    m, w, off = table.members, table.weights, table.offsets
    counts = table.counts

    def wsum(attr):
        a = attr[m]
        return _segment_sum(w.reshape((-1,) + (1,) * (a.ndim - 1)) * a, off)

    centers = wsum(scene.centers)
    spread = scene.centers[m] - np.repeat(centers, counts, axis=0)
    second = scene.covariances[m] + spread[:, :, None] * spread[:, None, :]
    cov = _segment_sum(w[:, None, None] * second, off)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return GaussianScene(centers, cov, wsum(scene.sh), wsum(scene.opacities), wsum(scene.features),
                         wsum(scene.confidences), scene.sh_degree)


def voxelize(scene: GaussianScene, voxel_size: float, lambda_sem: float = DEFAULT_LAMBDA):
    """Assign, weight and aggregate in one call; returns ``(compact_scene, table)``."""
    table = fusion_weights(assign_voxels(scene, voxel_size), scene, lambda_sem)
    return aggregate(scene, table), table


def weight_gradients(scene: GaussianScene, table: VoxelTable, lambda_sem: float = DEFAULT_LAMBDA):
    """Jacobians of the fusion weights with respect to member features.

    Returns one array per cell of shape ``(m, m, D)`` where entry
    ``[i, j]`` is ``d w_i / d f_j`` for the cell's i-th and j-th members
    (ascending scene index).  The prototype is differentiated as the mean
    of the member features; the voxel assignment itself is held fixed.
    """
    if table.weights is None:
        raise ValueError("fusion weights are not set; call fusion_weights first")
    out = []
    for s in range(len(table)):
        sl = slice(table.offsets[s], table.offsets[s + 1])
        idx = table.members[sl]
        w = table.weights[sl]
        f = scene.features[idx]
        n = len(idx)
        proto = np.broadcast_to(table.prototypes[s], f.shape)
        _, g_f, g_p = cosine_distance_grad(f, proto)
        # dd_k/df_j = delta_kj * g_f[k] + g_p[k] / n
        dd = np.repeat(g_p[:, None, :] / n, n, axis=1)
        dd[np.arange(n), np.arange(n)] += g_f
        # dw_i/dz_k = w_i (delta_ik - w_k);  dz_k/df_j = -lambda * dd_k/df_j
        dwdz = np.diag(w) - np.outer(w, w)
        out.append(-lambda_sem * np.einsum("ik,kjd->ijd", dwdz, dd))
    return out
