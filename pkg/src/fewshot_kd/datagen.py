"""Synthetic few-shot datasets and their CSV round-trip.

Coordinates are laid out as ``[signal | shared | noise]``. Base-class means
live only in the signal block; in the shared block base samples carry
class-independent nuisance variation. Validation and novel class means split
their energy between the signal block (fraction ``1 - novel_shared_frac``) and
the shared block (``novel_shared_frac``), so telling novel classes apart needs
directions that base-class discrimination has every reason to discard.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .episodes import SPLITS, Dataset
from .rng import CounterRNG


@dataclass
class GenSpec:
    n_base: int = 64
    n_val: int = 16
    n_novel: int = 20
    samples_per_class: int = 100
    ambient_dim: int = 32
    signal_dim: int = 8
    shared_dim: int = 4
    noise_sigma: float = 0.5
    class_scale: float = 1.0
    nuisance_sigma: float = 2.0
    novel_shared_frac: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_base, self.n_val, self.n_novel) < 0 or self.n_base < 2:
            raise ValueError("need n_base >= 2 and non-negative val/novel counts")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.signal_dim < 1 or self.shared_dim < 0 or self.signal_dim + self.shared_dim > self.ambient_dim:
            raise ValueError(
                f"infeasible dims: signal {self.signal_dim} + shared {self.shared_dim} > ambient {self.ambient_dim}"
            )
        if self.noise_sigma < 0 or self.nuisance_sigma < 0 or self.class_scale <= 0:
            raise ValueError("scales must be non-negative (class_scale positive)")
        if not 0.0 <= self.novel_shared_frac <= 1.0:
            raise ValueError("novel_shared_frac must lie in [0, 1]")
        if self.shared_dim == 0 and self.novel_shared_frac > 0:
            raise ValueError("novel_shared_frac > 0 needs shared_dim > 0")


def generate(spec: GenSpec) -> tuple[Dataset, dict]:
    """Deterministic dataset for ``spec``; also returns ground-truth metadata."""
    spec.validate()
    root = CounterRNG(spec.seed).child("datagen")
    d, s, h = spec.ambient_dim, spec.signal_dim, spec.shared_dim
    sig, sh = slice(0, s), slice(s, s + h)
    n_cls = spec.n_base + spec.n_val + spec.n_novel
    split_of = ["base"] * spec.n_base + ["val"] * spec.n_val + ["novel"] * spec.n_novel
    means = np.zeros((n_cls, d))
    for c in range(n_cls):
        g = root.child("mean", c).normal(s + h)
        if split_of[c] == "base":
            means[c, sig] = spec.class_scale * g[:s]
        else:
            means[c, sig] = spec.class_scale * np.sqrt(1.0 - spec.novel_shared_frac) * g[:s]
            if h:
                # rescale so the shared block carries the same per-dimension energy budget
                means[c, sh] = spec.class_scale * np.sqrt(spec.novel_shared_frac * s / h) * g[s:]
    n = spec.samples_per_class
    feats = np.empty((n_cls * n, d))
    labels = np.repeat(np.arange(n_cls), n)
    for c in range(n_cls):
        rows = slice(c * n, (c + 1) * n)
        noise = spec.noise_sigma * root.child("noise", c).normal(n * d).reshape(n, d)
        feats[rows] = means[c] + noise
        if split_of[c] == "base" and h:
            feats[rows, sh] += spec.nuisance_sigma * root.child("nuisance", c).normal(n * h).reshape(n, h)
    splits = {c: split_of[c] for c in range(n_cls)}
    meta = {
        **asdict(spec),
        "signal_dims": f"0:{s}",
        "shared_dims": f"{s}:{s + h}",
        "novel_shared_energy": spec.novel_shared_frac,
    }
    return Dataset(feats, labels, splits), meta


def fmt(v: float) -> str:
    return f"{v:.17g}"


def write_dataset(ds: Dataset, path, split_path=None) -> None:
    """Write ``class_id,f0..`` rows to ``path`` and ``class_id,split`` rows to ``split_path``."""
    path = Path(path)
    split_path = Path(split_path) if split_path else path.with_name(path.stem + "_splits.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id"] + [f"f{i}" for i in range(ds.dim)])
        for c, row in zip(ds.labels, ds.features):
            w.writerow([int(c)] + [fmt(v) for v in row])
    with open(split_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "split"])
        for c in sorted(ds.splits):
            w.writerow([c, ds.splits[c]])


def load_dataset(path, split_path=None) -> Dataset:
    path = Path(path)
    split_path = Path(split_path) if split_path else path.with_name(path.stem + "_splits.csv")
    splits: dict[int, str] = {}
    with open(split_path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["class_id", "split"]:
            raise ValueError(f"{split_path}: line 1: expected header 'class_id,split', got {header}")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise ValueError(f"{split_path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                cid = int(row[0])
            except ValueError as exc:
                raise ValueError(f"{split_path}: line {lineno}: bad class id {row[0]!r}") from exc
            if row[1] not in SPLITS:
                raise ValueError(f"{split_path}: line {lineno}: unknown split {row[1]!r}")
            if cid in splits:
                raise ValueError(
                    f"{split_path}: line {lineno}: class {cid} assigned to both {splits[cid]!r} and {row[1]!r}"
                )
            splits[cid] = row[1]
    labels, feats = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header or header[0] != "class_id" or header[1:] != [f"f{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: line 1: expected header 'class_id,f0,f1,...'")
        width = len(header)
        for lineno, row in enumerate(rows, start=2):
            if len(row) != width:
                raise ValueError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            if not all(np.isfinite(values)):
                raise ValueError(f"{path}: line {lineno}: non-finite feature")
            feats.append(values)
    unknown = sorted(set(labels) - set(splits))
    if unknown:
        raise ValueError(f"{path}: classes missing from {split_path.name}: {unknown}")
    return Dataset(np.array(feats, dtype=np.float64).reshape(len(feats), width - 1), np.array(labels), splits)


def write_metadata(meta: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))


def spec_fields() -> list[str]:
    return [f.name for f in fields(GenSpec)]
