"""Class-split datasets, N-way-K-shot episode sampling and nearest-centroid evaluation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import pairwise_distances
from .model import ModelParams, embed_only
from .rng import CounterRNG

SPLITS = ("base", "val", "novel")


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # (n_samples, D)
    labels: np.ndarray  # global class id per sample
    splits: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, D) with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        bad = {c: s for c, s in self.splits.items() if s not in SPLITS}
        if bad:
            raise ValueError(f"unknown split tags {bad}")
        missing = set(np.unique(self.labels).tolist()) - set(self.splits)
        if missing:
            raise ValueError(f"classes without a split assignment: {sorted(missing)}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.splits == other.splits
        )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return sorted(c for c, s in self.splits.items() if s == split)

    @property
    def n_base(self) -> int:
        return len(self.classes("base"))

    @property
    def n_val(self) -> int:
        return len(self.classes("val"))

    @property
    def n_novel(self) -> int:
        return len(self.classes("novel"))

    @cached_property
    def by_class(self) -> dict[int, np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        cls, starts = np.unique(self.labels[order], return_index=True)
        chunks = np.split(order, starts[1:])
        return {int(c): chunk for c, chunk in zip(cls, chunks)}

    def split_indices(self, split: str) -> np.ndarray:
        chunks = [self.by_class.get(c, np.empty(0, dtype=np.int64)) for c in self.classes(split)]
        return np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)


@dataclass(eq=False)
class Episode:
    support: np.ndarray  # sample indices, class-major
    support_labels: np.ndarray  # local labels
    query: np.ndarray
    query_labels: np.ndarray
    n_way: int
    k_shot: int
    q_per_class: int
    class_map: list[int]  # local label -> global class id

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Episode):
            return NotImplemented
        arrays = ("support", "support_labels", "query", "query_labels")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays) and (
            (self.n_way, self.k_shot, self.q_per_class, list(self.class_map))
            == (other.n_way, other.k_shot, other.q_per_class, list(other.class_map))
        )


def sample_episode(ds: Dataset, split: str, n_way: int, k_shot: int, q_per_class: int, rng: CounterRNG) -> Episode:
    """Uniformly pick ``n_way`` classes, then ``k_shot + q_per_class`` samples per class."""
    if min(n_way, k_shot) < 1 or q_per_class < 0:
        raise ValueError("n_way and k_shot must be >= 1, q_per_class >= 0")
    classes = ds.classes(split)
    if len(classes) < n_way:
        raise ValueError(f"split {split!r} has {len(classes)} classes, {n_way}-way episode needs {n_way - len(classes)} more")
    need = k_shot + q_per_class
    short = {c: need - len(ds.by_class[c]) for c in classes if len(ds.by_class[c]) < need}
    if short:
        raise ValueError(f"split {split!r}: classes short of {need} samples (deficit per class): {short}")
    picked = [classes[i] for i in rng.choose(len(classes), n_way)]
    support, query = [], []
    for c in picked:
        members = ds.by_class[c]
        chosen = members[rng.choose(len(members), need)]
        support.append(chosen[:k_shot])
        query.append(chosen[k_shot:])
    local = np.arange(n_way)
    return Episode(
        support=np.concatenate(support),
        support_labels=np.repeat(local, k_shot),
        query=np.concatenate(query) if q_per_class else np.empty(0, dtype=np.int64),
        query_labels=np.repeat(local, q_per_class),
        n_way=n_way,
        k_shot=k_shot,
        q_per_class=q_per_class,
        class_map=picked,
    )


def class_means(x: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    sums = np.zeros((n, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.bincount(labels, minlength=n)[:, None]


def nearest_centroid_classify(query_embed, protos) -> tuple[int, np.ndarray]:
    """Index of the closest prototype (lowest index on ties) and all distances."""
    protos = np.atleast_2d(np.asarray(protos, dtype=np.float64))
    if protos.shape[0] == 0 or protos.size == 0:
        raise ValueError("no prototypes")
    d = pairwise_distances(np.asarray(query_embed, dtype=np.float64)[None, :], protos)[0]
    return int(np.argmin(d)), d


def episode_accuracies(
    embeddings: np.ndarray,
    ds: Dataset,
    split: str,
    n_episodes: int,
    n_way: int,
    k_shot: int,
    q_per_class: int,
    rng: CounterRNG,
    threads: int = 1,
) -> np.ndarray:
    """Per-episode nearest-centroid accuracy for precomputed per-sample embeddings.

    Episode ``e`` draws from ``rng.child("episode", e)``, so any subset of
    episodes can be evaluated independently and the result does not depend on
    ``threads``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")

    def one(e: int) -> float:
        ep = sample_episode(ds, split, n_way, k_shot, q_per_class, rng.child("episode", e))
        protos = class_means(embeddings[ep.support], ep.support_labels, n_way)
        pred = np.argmin(pairwise_distances(embeddings[ep.query], protos), axis=1)
        return float(np.mean(pred == ep.query_labels))

    if threads <= 1:
        return np.array([one(e) for e in range(n_episodes)])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(one, range(n_episodes))))


def summarize(accs: np.ndarray) -> tuple[float, float]:
    """Mean and 95% confidence half-width (1.96 standard errors)."""
    if len(accs) < 2:
        raise ValueError("need at least 2 episodes for a confidence interval")
    return float(np.mean(accs)), float(1.96 * np.std(accs, ddof=1) / np.sqrt(len(accs)))


def evaluate_accuracy(
    params: ModelParams | None,
    ds: Dataset,
    split: str,
    n_episodes: int,
    n_way: int,
    k_shot: int,
    q_per_class: int,
    rng: CounterRNG,
    threads: int = 1,
) -> tuple[float, float]:
    """Mean episode accuracy and CI half-width; ``params=None`` uses raw features."""
    if n_episodes < 2:
        raise ValueError("need at least 2 episodes for a confidence interval")
    emb = ds.features if params is None else embed_only(params, ds.features)
    return summarize(episode_accuracies(emb, ds, split, n_episodes, n_way, k_shot, q_per_class, rng, threads))
