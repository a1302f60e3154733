"""Encoder-activation extraction, PCA, and group-separation scoring.

PCA runs on the sample covariance via cyclic Jacobi rotations; the
latent dimension is small (20), so the full symmetric eigendecomposition
costs nothing and stays dependency-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import skeleton
from .cvae import LimbCvae
from .errors import DegenerateData, GroupTooSmall, ShapeMismatch
from .nn_core import dense_forward, head_forward


def encoder_activations(
    model: LimbCvae, windows, hidden: bool = False
) -> np.ndarray:
    """Mean-mode encoder output per window, one row each.

    Returns the latent means (n, latent_dim) by default; with ``hidden``
    the post-tanh hidden layer (n, encoder units) instead.
    """
    if isinstance(windows, np.ndarray):
        data = np.atleast_2d(windows)
    else:
        data = np.stack([skeleton.vectorize(w) for w in windows])
    if data.shape[1] != model.io_dim:
        raise ShapeMismatch(
            f"window dim {data.shape[1]} != model input dim {model.io_dim}"
        )
    h, _ = dense_forward(model.encoder_hidden, data)
    if hidden:
        return h
    mean, _, _ = head_forward(model.encoder_head, h)
    return mean


@dataclass
class PcaModel:
    """Mean, orthonormal components (rows), and descending variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variances: np.ndarray


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unsorted. Converges when the off-diagonal Frobenius mass drops below
    1e-14 of the matrix scale.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"matrix must be square, got {a.shape}")
    d = a.shape[0]
    v = np.eye(d)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-14 * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


def pca_fit(data: np.ndarray, k: int) -> PcaModel:
    """Top-k principal components of the sample covariance (divisor n-1).

    Sign convention: each component's largest-magnitude entry is made
    positive, so fits are deterministic.
    """
    data = np.asarray(data, dtype=np.float64)
    n, dim = data.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if not 1 <= k <= dim:
        raise ValueError(f"k must lie in [1, {dim}]")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    if np.all(np.diag(cov) < 1e-300):
        raise DegenerateData("data has zero variance in every dimension")
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T[:k].copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean, components=components, explained_variances=eigvals[:k].copy()
    )


def project(pca: PcaModel, data: np.ndarray) -> np.ndarray:
    """Coordinates of data rows in the component basis."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != pca.mean.shape[0]:
        raise ShapeMismatch(
            f"data dim {data.shape[1]} != PCA dim {pca.mean.shape[0]}"
        )
    return (data - pca.mean) @ pca.components.T


def separation_score(group_a: np.ndarray, group_b: np.ndarray) -> float:
    """Silhouette-style separation of two point clouds, in [-1, 1].

    For each point, a is the mean distance to its own group's other
    members and b the mean distance to the other group; the point scores
    (b - a) / max(a, b) and the result is the mean over all points.
    """
    group_a = np.atleast_2d(np.asarray(group_a, dtype=np.float64))
    group_b = np.atleast_2d(np.asarray(group_b, dtype=np.float64))
    if group_a.shape[0] < 2 or group_b.shape[0] < 2:
        raise GroupTooSmall("each group needs at least two points")

    def mean_dists(points, others, exclude_self):
        diffs = points[:, None, :] - others[None, :, :]
        dists = np.linalg.norm(diffs, axis=2)
        if exclude_self:
            return dists.sum(axis=1) / (others.shape[0] - 1)
        return dists.mean(axis=1)

    scores = []
    for own, other in ((group_a, group_b), (group_b, group_a)):
        a = mean_dists(own, own, exclude_self=True)
        b = mean_dists(own, other, exclude_self=False)
        denom = np.maximum(np.maximum(a, b), 1e-300)
        scores.append((b - a) / denom)
    return float(np.mean(np.concatenate(scores)))
