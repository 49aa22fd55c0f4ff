"""Distances, probability vectors and singular values over float64 arrays."""

from __future__ import annotations

import numpy as np

from . import kernels

PROB_EPS = 1e-12
DIST_EPS = 1e-24


def _as_finite(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def euclidean_distance(a, b) -> float:
    """``sqrt(sum((a - b)**2) + DIST_EPS)``; the epsilon keeps the gradient finite at a == b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(diff @ diff + DIST_EPS))


def pairwise_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Regularized Euclidean distances, shape ``(len(x), len(c))``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if x.shape[1] != c.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {c.shape[1]}")
    return np.sqrt(kernels.sq_dists(x, c) + DIST_EPS)


def smooth(p: np.ndarray, eps: float = PROB_EPS) -> np.ndarray:
    """Affine smoothing ``(p + eps) / (1 + n * eps)`` along the last axis."""
    n = p.shape[-1]
    return (p + eps) / (1.0 + n * eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax (last axis) with max-shift; not smoothed."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_neg_dist(distances, tau: float = 1.0) -> np.ndarray:
    """Smoothed ``softmax(-d / tau)`` over the last axis."""
    d = _as_finite(distances, "distances")
    if d.size == 0 or d.shape[-1] == 0:
        raise ValueError("distances must be non-empty")
    if not tau > 0:
        raise ValueError("tau must be positive")
    return smooth(softmax(-d / tau))


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = _as_finite(p, "p")
    q = _as_finite(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p, q) -> float:
    """KL(p || q) after re-smoothing both inputs (so zeros are allowed)."""
    p, q = _check_pair(p, q)
    p = smooth(p / p.sum())
    q = smooth(q / q.sum())
    return float(np.sum(p * np.log(p / q)))


def symmetric_kl(p, q) -> float:
    return kl_divergence(p, q) + kl_divergence(q, p)


def singular_values(m) -> np.ndarray:
    """All ``min(rows, cols)`` singular values, descending (one-sided Jacobi)."""
    a = _as_finite(m, "matrix")
    if a.ndim != 2 or 0 in a.shape:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if a.shape[0] < a.shape[1]:
        a = a.T
    sv = kernels.jacobi_sv(a)
    return np.sort(sv)[::-1]
