"""Shared oracles for the test-suite: finite differences and small builders."""

from __future__ import annotations

import numpy as np

from fewshot_kd.losses import EpisodeEmbeddings
from fewshot_kd.model import LayerParams, ModelParams


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max abs difference scaled by the larger gradient norm (floored)."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def random_episode(rng: np.random.Generator, n_way=3, k_shot=2, q_per=2, dim=4, scale=1.0) -> EpisodeEmbeddings:
    support = scale * rng.standard_normal((n_way * k_shot, dim))
    query = scale * rng.standard_normal((n_way * q_per, dim))
    s_lab = rng.permutation(np.repeat(np.arange(n_way), k_shot))
    q_lab = np.repeat(np.arange(n_way), q_per)
    return EpisodeEmbeddings(query, q_lab, support, s_lab, n_way, k_shot)


def random_params(rng: np.random.Generator, dims=(5, 7, 4), n_classes=3) -> ModelParams:
    layers = [
        LayerParams(rng.standard_normal((dims[i + 1], dims[i])), rng.standard_normal(dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    head = LayerParams(rng.standard_normal((n_classes, dims[-1])), rng.standard_normal(n_classes))
    return ModelParams(layers, head)
