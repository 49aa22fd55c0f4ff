"""Embedding spectra (dimension collapse) and class-geometry summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .episodes import Dataset
from .linalg import singular_values
from .model import ModelParams, embed_only
from .rng import CounterRNG


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    effective_rank: int
    log10_values: np.ndarray
    n_samples: int
    embed_dim: int


@dataclass
class GeometryReport:
    per_class_variance: dict[int, float]
    mean_intra_variance: float
    mean_inter_center_distance: float
    undersampled: list[int]


def effective_rank(sv: np.ndarray, threshold: float = 1e-3) -> int:
    """Number of singular values strictly above ``threshold * sv[0]``."""
    if len(sv) == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > threshold * sv[0]))


def spectrum_of(matrix: np.ndarray, threshold: float = 1e-3, center: bool = True) -> SpectrumReport:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if center:
        m = m - m.mean(axis=0)
    sv = singular_values(m)
    with np.errstate(divide="ignore"):
        logs = np.log10(sv)
    return SpectrumReport(sv, effective_rank(sv, threshold), logs, m.shape[0], m.shape[1])


def embedding_spectrum(
    params: ModelParams | None,
    ds: Dataset,
    split: str = "base",
    max_samples: int = 4000,
    threshold: float = 1e-3,
    center: bool = True,
    seed: int = 0,
) -> SpectrumReport:
    """Spectrum of the (column-centered) embedding matrix of up to ``max_samples`` split samples."""
    idx = ds.split_indices(split)
    if len(idx) < 2:
        raise ValueError(f"split {split!r} has fewer than 2 samples")
    if len(idx) > max_samples:
        idx = np.sort(idx[CounterRNG(seed).child("spectrum").choose(len(idx), max_samples)])
    x = ds.features[idx]
    emb = x if params is None else embed_only(params, x)
    return spectrum_of(emb, threshold, center)


def geometry_of(emb: np.ndarray, labels: np.ndarray) -> GeometryReport:
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    centers, variances, thin = [], {}, []
    for c in classes:
        rows = emb[labels == c]
        mu = rows.mean(axis=0)
        centers.append(mu)
        if len(rows) < 2:
            thin.append(int(c))
            variances[int(c)] = 0.0
        else:
            variances[int(c)] = float(np.mean(np.sum((rows - mu) ** 2, axis=1)))
    centers = np.array(centers)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(len(classes), k=1)
    return GeometryReport(variances, float(np.mean(list(variances.values()))), float(dist[iu].mean()), thin)


def class_geometry(params: ModelParams | None, ds: Dataset, split: str = "novel") -> GeometryReport:
    idx = ds.split_indices(split)
    x = ds.features[idx]
    emb = x if params is None else embed_only(params, x)
    return geometry_of(emb, ds.labels[idx])


def write_spectrum_csv(report: SpectrumReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank_index", "singular_value", "log10_value"])
        for i, (sv, lg) in enumerate(zip(report.singular_values, report.log10_values), start=1):
            w.writerow([i, f"{sv:.17g}", f"{lg:.17g}"])


def write_geometry_csv(report: GeometryReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "intra_variance", "inter_center_distance"])
        for c, v in sorted(report.per_class_variance.items()):
            w.writerow([c, f"{v:.17g}", ""])
        w.writerow(["mean", f"{report.mean_intra_variance:.17g}", f"{report.mean_inter_center_distance:.17g}"])
