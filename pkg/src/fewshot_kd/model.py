"""MLP feature extractor plus linear head, with hand-written backward passes."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .rng import CounterRNG

CHECKPOINT_MAGIC = "MDCKPT v1"
DEFAULT_HIDDEN = (64, 64, 32)


@dataclass(eq=False)
class LayerParams:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerParams):
            return NotImplemented
        return np.array_equal(self.weight, other.weight) and np.array_equal(self.bias, other.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(eq=False)
class ModelParams:
    """Extractor layers (affine + ReLU each) and a linear classification head.

    The same container doubles as the gradient type: gradients have exactly the
    parameter shapes. ``version`` is bumped on every in-place update so stale
    forward traces can be detected.
    """

    layers: list[LayerParams]
    head: LayerParams
    activation: str = "relu"
    version: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.layers:
            raise ValueError("extractor needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.bias.shape != (layer.out_dim,):
                raise ValueError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if i and layer.in_dim != self.layers[i - 1].out_dim:
                raise ValueError(f"layer {i}: in_dim {layer.in_dim} != previous out_dim {self.layers[i - 1].out_dim}")
        if self.head.in_dim != self.embed_dim:
            raise ValueError(f"head in_dim {self.head.in_dim} != embedding dim {self.embed_dim}")
        if self.head.bias.shape != (self.head.out_dim,):
            raise ValueError("head bias shape mismatch")

    @property
    def layer_dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def embed_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_classes(self) -> int:
        return self.head.out_dim

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            yield f"extractor.{i}.weight", layer.weight
            yield f"extractor.{i}.bias", layer.bias
        yield "head.weight", self.head.weight
        yield "head.bias", self.head.bias

    def tensors(self) -> list[np.ndarray]:
        return [t for _, t in self.named_tensors()]

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            [LayerParams(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in self.layers],
            LayerParams(np.zeros_like(self.head.weight), np.zeros_like(self.head.bias)),
            self.activation,
        )

    def add_(self, other: "ModelParams", scale: float = 1.0) -> "ModelParams":
        for mine, theirs in zip(self.tensors(), other.tensors()):
            if mine.shape != theirs.shape:
                raise ValueError(f"shape mismatch {mine.shape} vs {theirs.shape}")
            mine += scale * theirs
        self.version += 1
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.activation == other.activation and self.equals(other)

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of every tensor."""
        mine, theirs = self.tensors(), other.tensors()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (n, in_dim)
    pre: list[np.ndarray]  # per layer, (n, out_dim)
    post: list[np.ndarray]
    token: tuple[int, int]
    squeeze: bool


@dataclass(frozen=True)
class TeacherSnapshot:
    params: ModelParams
    val_accuracy: float
    epoch_taken: int


def init_params(layer_dims, n_base_classes: int, seed: int) -> ModelParams:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {layer_dims!r}")
    if n_base_classes < 2:
        raise ValueError("need at least two base classes")
    root = CounterRNG(seed).child("init")

    def draw(name: str, fan_out: int, fan_in: int) -> LayerParams:
        w = root.child(name).normal(fan_out * fan_in).reshape(fan_out, fan_in)
        return LayerParams(w * np.sqrt(2.0 / fan_in), np.zeros(fan_out))

    layers = [draw(f"extractor.{i}", dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
    return ModelParams(layers, draw("head", n_base_classes, dims[-1]))


def embed(params: ModelParams, x) -> tuple[np.ndarray, ForwardTrace]:
    """Embed one vector or a batch (rows); returns the embedding and its trace."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.layers[0].in_dim:
        raise ValueError(f"input dim {h.shape[1]} != {params.layers[0].in_dim}")
    inputs = h
    pre, post = [], []
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    trace = ForwardTrace(inputs, pre, post, (id(params), params.version), squeeze)
    return (h[0] if squeeze else h), trace


def embed_only(params: ModelParams, x) -> np.ndarray:
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer in params.layers:
        h = np.maximum(h @ layer.weight.T + layer.bias, 0.0)
    return h


def classify_logits(params: ModelParams, embedding) -> np.ndarray:
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape[-1] != params.head.in_dim:
        raise ValueError(f"embedding dim {e.shape[-1]} != head in_dim {params.head.in_dim}")
    return e @ params.head.weight.T + params.head.bias


def head_backward(params: ModelParams, embeddings: np.ndarray, grad_logits: np.ndarray):
    """Gradients of ``sum(grad_logits * logits)``: (dW, db, d_embeddings)."""
    e = np.atleast_2d(embeddings)
    g = np.atleast_2d(grad_logits)
    return g.T @ e, g.sum(axis=0), g @ params.head.weight


def backprop_embedding_grad(params: ModelParams, trace: ForwardTrace, grad_wrt_embedding) -> ModelParams:
    """Extractor gradients of ``<grad_wrt_embedding, embedding>``; head grads are zero.

    ReLU's subgradient at exactly 0 is taken as 0.
    """
    if trace.token != (id(params), params.version) or len(trace.pre) != len(params.layers):
        raise ValueError("forward trace does not belong to these parameters (stale or foreign)")
    g = np.atleast_2d(np.asarray(grad_wrt_embedding, dtype=np.float64))
    if g.shape != trace.post[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != embedding shape {trace.post[-1].shape}")
    grads = params.zeros_like()
    for i in range(len(params.layers) - 1, -1, -1):
        dz = g * (trace.pre[i] > 0.0)
        prev = trace.inputs if i == 0 else trace.post[i - 1]
        grads.layers[i].weight[...] = dz.T @ prev
        grads.layers[i].bias[...] = dz.sum(axis=0)
        if i:
            g = dz @ params.layers[i].weight
    return grads


def snapshot(params: ModelParams, val_acc: float, epoch: int) -> TeacherSnapshot:
    if not 0.0 <= val_acc <= 1.0:
        raise ValueError(f"val_acc {val_acc} outside [0, 1]")
    frozen = params.copy()
    for t in frozen.tensors():
        t.flags.writeable = False
    return TeacherSnapshot(frozen, float(val_acc), int(epoch))


def thaw(snap: TeacherSnapshot) -> ModelParams:
    """Writable deep copy of a snapshot's parameters."""
    params = snap.params.copy()
    for t in params.tensors():
        t.flags.writeable = True
    return params


def save_checkpoint(params: ModelParams, path) -> None:
    lines = [
        CHECKPOINT_MAGIC,
        "dims " + " ".join(map(str, params.layer_dims)) + f" classes {params.n_classes} activation {params.activation}",
    ]
    for name, t in params.named_tensors():
        shape = "x".join(map(str, t.shape))
        lines.append(f"{name} {shape} " + " ".join(f"{v:.17g}" for v in t.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: line 1: expected {CHECKPOINT_MAGIC!r}")
    head = text[1].split() if len(text) > 1 else []
    try:
        ci = head.index("classes")
        dims = [int(v) for v in head[1:ci]]
        n_classes = int(head[ci + 1])
        activation = head[head.index("activation") + 1] if "activation" in head else "relu"
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: line 2: malformed header {text[1:2]!r}") from exc
    skeleton = init_params(dims, n_classes, 0)
    expected = dict(skeleton.named_tensors())
    seen = set()
    for lineno, line in enumerate(text[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        name = parts[0]
        if name not in expected or len(parts) < 2:
            raise ValueError(f"{path}: line {lineno}: unknown tensor {name!r}")
        target = expected[name]
        shape = tuple(int(s) for s in parts[1].split("x"))
        if shape != target.shape:
            raise ValueError(f"{path}: line {lineno}: shape {shape} != {target.shape}")
        try:
            values = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        if values.size != target.size or not np.all(np.isfinite(values)):
            raise ValueError(f"{path}: line {lineno}: expected {target.size} finite values, got {values.size}")
        target[...] = values.reshape(shape)
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    skeleton.activation = activation
    return skeleton
