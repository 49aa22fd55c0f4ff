"""SGD with momentum, whole-classification pre-training and distilled meta-training."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .episodes import Dataset, Episode, evaluate_accuracy, sample_episode
from .losses import EpisodeEmbeddings, LossReport, episode_objective, pretrain_loss
from .model import (
    DEFAULT_HIDDEN,
    ModelParams,
    TeacherSnapshot,
    backprop_embedding_grad,
    classify_logits,
    embed,
    embed_only,
    head_backward,
    init_params,
    snapshot,
    thaw,
)
from .rng import CounterRNG

log = logging.getLogger(__name__)

EPOCH_LOG_HEADER = ["epoch", "sc", "skl", "nnskl", "meta", "val_acc", "teacher_replaced", "teacher_val_acc"]


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient turns non-finite; ``state`` holds the offending inputs."""

    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


@dataclass
class OptimizerState:
    buffers: list[np.ndarray]
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4


def make_optimizer(params: ModelParams, lr=1e-3, momentum=0.9, weight_decay=5e-4) -> OptimizerState:
    if not lr > 0 or not 0 <= momentum < 1 or weight_decay < 0:
        raise ValueError("need lr > 0, momentum in [0, 1), weight_decay >= 0")
    return OptimizerState([np.zeros_like(t) for t in params.tensors()], lr, momentum, weight_decay)


def sgd_step(params: ModelParams, grads: ModelParams, state: OptimizerState):
    """``g' = g + wd*w; buf = momentum*buf + g'; w -= lr*buf`` for every tensor, in place."""
    tensors, gs = params.tensors(), grads.tensors()
    if len(tensors) != len(gs) or len(tensors) != len(state.buffers):
        raise ValueError("gradient / buffer structure does not match parameters")
    for w, g, buf in zip(tensors, gs, state.buffers):
        if w.shape != g.shape or w.shape != buf.shape:
            raise ValueError(f"shape mismatch: param {w.shape}, grad {g.shape}, buffer {buf.shape}")
    for w, g, buf in zip(tensors, gs, state.buffers):
        buf *= state.momentum
        buf += g + state.weight_decay * w
        w -= state.lr * buf
    params.version += 1
    return params, state


# --- pre-training -------------------------------------------------------------


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    schedule: str = "cosine"
    val_episodes: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"schedule must be 'cosine' or 'constant', not {self.schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 towards 0 at ``total``."""
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * step / max(total, 1)))


@dataclass
class PretrainLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


def base_label_map(ds: Dataset) -> dict[int, int]:
    return {c: i for i, c in enumerate(ds.classes("base"))}


def pretrain(ds: Dataset, cfg: PretrainConfig, params: ModelParams | None = None):
    """Minibatch cross-entropy over base classes; returns ``(params, logs)``."""
    label_map = base_label_map(ds)
    if not label_map:
        raise ValueError("dataset has no base classes")
    root = CounterRNG(cfg.seed)
    if params is None:
        params = init_params([ds.dim, *cfg.hidden], len(label_map), cfg.seed)
    opt = make_optimizer(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    idx = ds.split_indices("base")
    y_all = np.array([label_map[int(c)] for c in ds.labels[idx]])
    logs = []
    steps_per_epoch = -(-len(idx) // cfg.batch_size)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = root.child("pretrain", epoch).choose(len(idx), len(idx))
        total, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.schedule == "cosine":
                opt.lr = cosine_lr(cfg.lr, step, cfg.epochs * steps_per_epoch)
            step += 1
            b = order[start : start + cfg.batch_size]
            emb, trace = embed(params, ds.features[idx[b]])
            logits = classify_logits(params, emb)
            loss, g_logits = pretrain_loss(logits, y_all[b])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"pre-training loss non-finite at epoch {epoch}", {"batch": idx[b]})
            dw, db, g_emb = head_backward(params, emb, g_logits)
            grads = backprop_embedding_grad(params, trace, g_emb)
            grads.head.weight[...] = dw
            grads.head.bias[...] = db
            sgd_step(params, grads, opt)
            total += loss * len(b)
            correct += int(np.sum(np.argmax(logits, axis=1) == y_all[b]))
        val_acc = float("nan")
        if cfg.val_episodes >= 2 and ds.n_val >= 5:
            val_acc, _ = evaluate_accuracy(params, ds, "val", cfg.val_episodes, 5, 1, 15, root.child("val"))
        logs.append(PretrainLog(epoch, total / len(idx), correct / len(idx), val_acc))
        log.info("pretrain epoch %d loss %.4f acc %.4f val %.4f", epoch, logs[-1].train_loss, logs[-1].train_acc, val_acc)
    return params, logs


def base_accuracy(params: ModelParams, ds: Dataset) -> float:
    label_map = base_label_map(ds)
    idx = ds.split_indices("base")
    y = np.array([label_map[int(c)] for c in ds.labels[idx]])
    logits = classify_logits(params, embed_only(params, ds.features[idx]))
    return float(np.mean(np.argmax(logits, axis=1) == y))


# --- meta-training ------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 40
    iters_per_epoch: int = 100
    n_way: int = 20
    k_shot: int = 1
    q_per_class: int = 15
    lambda1: float = 1.0
    lambda2: float = 1.0
    skl_batch_size: int = 64
    val_episodes: int = 200
    val_way: int = 5
    seed: int = 0
    nnskl_grad: str = "exact"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    monitor_split: str | None = None
    monitor_episodes: int = 200

    def __post_init__(self) -> None:
        counts = (self.epochs, self.iters_per_epoch, self.n_way, self.k_shot, self.skl_batch_size, self.val_episodes)
        if self.epochs < 0 or min(counts[1:]) < 1 or self.q_per_class < 1:
            raise ValueError("episode and batch counts must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.nnskl_grad not in ("exact", "paper_approx"):
            raise ValueError(f"nnskl_grad must be 'exact' or 'paper_approx', not {self.nnskl_grad!r}")


@dataclass
class EpochLog:
    epoch: int
    mean_sc: float
    mean_skl: float
    mean_nnskl: float
    mean_meta: float
    val_acc_1shot: float
    val_acc_kshot: float
    teacher_replaced: bool
    teacher_val_acc: float
    monitor_acc_1shot: float | None = None


class TeacherTracker:
    """Keeps the best snapshot so far; replaces it only on strict improvement."""

    def __init__(self, params: ModelParams, val_acc: float, epoch: int = 0) -> None:
        self.best: TeacherSnapshot = snapshot(params, val_acc, epoch)

    @property
    def params(self) -> ModelParams:
        return self.best.params

    def update(self, params: ModelParams, val_acc: float, epoch: int) -> bool:
        if val_acc > self.best.val_accuracy:
            self.best = snapshot(params, val_acc, epoch)
            return True
        return False


@dataclass
class StepInputs:
    """Everything one meta-training iteration consumes, for replay in tests."""

    episode: Episode
    skl_indices: np.ndarray | None


def draw_step_inputs(ds: Dataset, cfg: TrainConfig, root: CounterRNG, epoch: int, it: int) -> StepInputs:
    ep = sample_episode(ds, "base", cfg.n_way, cfg.k_shot, cfg.q_per_class, root.child("episode", epoch, it))
    skl_idx = None
    if cfg.lambda1:
        base = ds.split_indices("base")
        skl_idx = base[root.child("skl", epoch, it).choose(len(base), cfg.skl_batch_size)]
    return StepInputs(ep, skl_idx)


def meta_step_objective(
    student: ModelParams,
    teacher: ModelParams | None,
    ds: Dataset,
    inputs: StepInputs,
    cfg: TrainConfig,
) -> tuple[LossReport, ModelParams]:
    """Loss report and full student gradient for one episode and SKL batch."""
    ep = inputs.episode
    idx = np.concatenate([ep.support, ep.query])
    ns = len(ep.support)
    emb, trace = embed(student, ds.features[idx])
    s_ep = EpisodeEmbeddings(emb[ns:], ep.query_labels, emb[:ns], ep.support_labels, ep.n_way, ep.k_shot)
    t_ep = None
    if cfg.lambda2:
        t_emb = embed_only(teacher, ds.features[idx])
        t_ep = EpisodeEmbeddings(t_emb[ns:], ep.query_labels, t_emb[:ns], ep.support_labels, ep.n_way, ep.k_shot)
    skl_emb = t_logits = skl_trace = None
    if cfg.lambda1:
        x = ds.features[inputs.skl_indices]
        skl_emb, skl_trace = embed(student, x)
        t_logits = classify_logits(teacher, embed_only(teacher, x))
    report = episode_objective(s_ep, t_ep, student, skl_emb, t_logits, cfg.lambda1, cfg.lambda2, cfg.nnskl_grad)
    grads = backprop_embedding_grad(
        student, trace, np.concatenate([report.grads_wrt_support_embeds, report.grads_wrt_query_embeds])
    )
    if cfg.lambda1:
        grads.add_(backprop_embedding_grad(student, skl_trace, report.grads_wrt_skl_embeds))
        grads.head.weight[...] = report.grads_wrt_head[0]
        grads.head.bias[...] = report.grads_wrt_head[1]
    return report, grads


ValFn = Callable[[ModelParams, int, int], float]


def metatrain(
    student: ModelParams,
    ds: Dataset,
    cfg: TrainConfig,
    val_fn: ValFn | None = None,
    on_epoch: Callable[[EpochLog, ModelParams], None] | None = None,
):
    """Episodic training with SC + weighted SKL/NNSKL against a best-so-far teacher.

    ``student`` (normally the pre-trained model) is updated in place and also
    seeds the initial teacher. ``val_fn(params, k_shot, epoch)`` overrides the
    validation metric (default: nearest-centroid accuracy on the val split over
    a fixed set of episodes). Returns ``(student, best_snapshot, logs)``.
    """
    if ds.n_base < cfg.n_way:
        log.warning("only %d base classes; training episodes reduced from %d-way to %d-way", ds.n_base, cfg.n_way, ds.n_base)
        cfg = replace(cfg, n_way=ds.n_base)
    root = CounterRNG(cfg.seed).child("metatrain")
    val_rng = root.child("val")
    if val_fn is None:

        def val_fn(params: ModelParams, k_shot: int, epoch: int) -> float:
            return evaluate_accuracy(params, ds, "val", cfg.val_episodes, cfg.val_way, k_shot, 15, val_rng)[0]

    opt = make_optimizer(student, cfg.lr, cfg.momentum, cfg.weight_decay)
    tracker = TeacherTracker(student, val_fn(student, cfg.k_shot, 0), 0)
    teacher = thaw(tracker.best)
    logs: list[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        for it in range(cfg.iters_per_epoch):
            inputs = draw_step_inputs(ds, cfg, root, epoch, it)
            report, grads = meta_step_objective(student, teacher, ds, inputs, cfg)
            values = np.array([report.sc, report.skl, report.nnskl, report.meta])
            if not (np.all(np.isfinite(values)) and all(np.all(np.isfinite(g)) for g in grads.tensors())):
                raise TrainingDiverged(
                    f"non-finite loss or gradient at epoch {epoch} iteration {it}",
                    {"epoch": epoch, "iteration": it, "losses": values, "inputs": inputs, "student": student.copy()},
                )
            sgd_step(student, grads, opt)
            sums += values
        means = sums / cfg.iters_per_epoch
        acc_k = val_fn(student, cfg.k_shot, epoch)
        acc_1 = acc_k if cfg.k_shot == 1 else val_fn(student, 1, epoch)
        replaced = tracker.update(student, acc_k, epoch)
        if replaced:
            teacher = thaw(tracker.best)
        monitor = None
        if cfg.monitor_split:
            monitor = evaluate_accuracy(
                student, ds, cfg.monitor_split, cfg.monitor_episodes, cfg.val_way, 1, 15, root.child("monitor")
            )[0]
        entry = EpochLog(epoch, *means, acc_1, acc_k, replaced, tracker.best.val_accuracy, monitor)
        logs.append(entry)
        log.info(
            "epoch %d sc %.4f skl %.4f nnskl %.4f val %.4f teacher %.4f%s",
            epoch, means[0], means[1], means[2], acc_k, tracker.best.val_accuracy, " (replaced)" if replaced else "",
        )
        if on_epoch is not None:
            on_epoch(entry, student)
    return student, tracker.best, logs


def fmt(v: float) -> str:
    return f"{v:.17g}"


def write_epoch_csv(logs: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_LOG_HEADER)
        for e in logs:
            w.writerow([
                e.epoch, fmt(e.mean_sc), fmt(e.mean_skl), fmt(e.mean_nnskl), fmt(e.mean_meta),
                fmt(e.val_acc_kshot), int(e.teacher_replaced), fmt(e.teacher_val_acc),
            ])


def write_pretrain_csv(logs: list[PretrainLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in fields(PretrainLog)])
        for e in logs:
            w.writerow([e.epoch, fmt(e.train_loss), fmt(e.train_acc), fmt(e.val_acc)])
