"""Training objectives and their gradients with respect to embeddings and logits.

All distances are the regularized Euclidean distance from :mod:`linalg`.
Distribution-matching terms compare epsilon-smoothed probabilities, and the
returned gradients are exact for the smoothed quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import PROB_EPS, pairwise_distances, smooth, softmax
from .model import ModelParams, classify_logits, head_backward


@dataclass
class EpisodeEmbeddings:
    query: np.ndarray  # (n_query, D)
    query_labels: np.ndarray  # local labels in [0, n_way)
    support: np.ndarray  # (n_way * k_shot, D)
    support_labels: np.ndarray
    n_way: int
    k_shot: int
    tau: float = 1.0

    def __post_init__(self) -> None:
        self.query = np.atleast_2d(np.asarray(self.query, dtype=np.float64))
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        self.query_labels = np.asarray(self.query_labels, dtype=np.int64)
        self.support_labels = np.asarray(self.support_labels, dtype=np.int64)
        if self.query.shape[1] != self.support.shape[1]:
            raise ValueError("query and support embedding dims differ")
        if len(self.query_labels) != len(self.query) or len(self.support_labels) != len(self.support):
            raise ValueError("label count does not match embedding count")
        for labels in (self.query_labels, self.support_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_way):
                raise ValueError(f"labels must lie in [0, {self.n_way})")
        counts = np.bincount(self.support_labels, minlength=self.n_way)
        if np.any(counts != self.k_shot):
            raise ValueError(f"expected exactly {self.k_shot} support vectors per class, got {counts.tolist()}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def same_structure(self, other: "EpisodeEmbeddings") -> bool:
        return (
            self.n_way == other.n_way
            and self.k_shot == other.k_shot
            and self.query.shape[0] == other.query.shape[0]
            and np.array_equal(self.query_labels, other.query_labels)
            and np.array_equal(self.support_labels, other.support_labels)
        )


@dataclass
class LossReport:
    sc: float
    skl: float
    nnskl: float
    meta: float
    grads_wrt_query_embeds: np.ndarray
    grads_wrt_support_embeds: np.ndarray
    grads_wrt_head: tuple[np.ndarray, np.ndarray] | None
    grads_wrt_skl_embeds: np.ndarray | None


def compute_prototypes(ep: EpisodeEmbeddings) -> np.ndarray:
    """Class means of the support set, shape ``(n_way, D)``.

    Rows of a class are summed in lexicographic order so the result does not
    depend on support order, bit for bit.
    """
    s = ep.support
    if ep.k_shot == 1:
        order = np.argsort(ep.support_labels, kind="stable")
    else:
        order = np.lexsort((*s.T[::-1], ep.support_labels))
    rows = s[order].reshape(ep.n_way, ep.k_shot, s.shape[1])
    acc = rows[:, 0].copy()
    for j in range(1, ep.k_shot):
        acc = acc + rows[:, j]
    return acc / ep.k_shot


def _distance_backward(query, protos, dists, grad_d):
    """Chain ``dL/dd_ik`` through ``d_ik = ||q_i - c_k||`` into queries and centers."""
    h = grad_d / dists
    dq = query * h.sum(axis=1, keepdims=True) - h @ protos
    dc = protos * h.sum(axis=0)[:, None] - h.T @ query
    return dq, dc


def _scatter_to_support(ep: EpisodeEmbeddings, dc: np.ndarray) -> np.ndarray:
    return dc[ep.support_labels] / ep.k_shot


def _sc_parts(ep: EpisodeEmbeddings, protos: np.ndarray):
    d = pairwise_distances(ep.query, protos)
    z = -d / ep.tau
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(len(ep.query))
    loss = float(np.mean(lse - z[rows, ep.query_labels]))
    p = softmax(z)
    omega = -p
    omega[rows, ep.query_labels] += 1.0
    grad_d = omega / (len(ep.query) * ep.tau)
    return loss, d, grad_d


def sc_loss(ep: EpisodeEmbeddings, protos: np.ndarray):
    """Supervised contrastive loss and its gradient w.r.t. each query embedding.

    ``grad_i = (1 / (|Q| tau)) * sum_k w_k (f_i - c_k) / ||f_i - c_k||`` with
    ``w_y = 1 - p_y`` and ``w_k = -p_k`` otherwise; prototypes held fixed.
    """
    loss, d, grad_d = _sc_parts(ep, protos)
    dq, _ = _distance_backward(ep.query, protos, d, grad_d)
    return loss, dq


def sc_loss_full(ep: EpisodeEmbeddings):
    """SC loss with gradients for queries and supports (through the prototypes)."""
    protos = compute_prototypes(ep)
    loss, d, grad_d = _sc_parts(ep, protos)
    dq, dc = _distance_backward(ep.query, protos, d, grad_d)
    return loss, dq, _scatter_to_support(ep, dc)


def _skl_rows(p: np.ndarray, q: np.ndarray):
    """Row-wise symmetric KL of smoothed ``p`` vs ``q``, and its gradient w.r.t. raw ``p``."""
    a = smooth(p)
    b = smooth(q)
    log_ratio = np.log(a) - np.log(b)
    values = np.sum((a - b) * log_ratio, axis=-1)
    grad_a = log_ratio + 1.0 - b / a
    return values, grad_a / (1.0 + p.shape[-1] * PROB_EPS)


def _softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))


def skl_loss(student_logits, teacher_logits):
    """Batch-mean symmetric KL between softmax outputs; teacher is constant."""
    zs = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    zt = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if zs.shape != zt.shape:
        raise ValueError(f"logit shape mismatch: {zs.shape} vs {zt.shape}")
    ps = softmax(zs)
    values, grad_p = _skl_rows(ps, softmax(zt))
    return float(values.mean()), _softmax_backward(ps, grad_p) / len(zs)


def _nnskl_parts(student_ep: EpisodeEmbeddings, teacher_ep: EpisodeEmbeddings):
    if not student_ep.same_structure(teacher_ep):
        raise ValueError("student and teacher episodes differ in structure")
    protos = compute_prototypes(student_ep)
    t_protos = compute_prototypes(teacher_ep)
    d = pairwise_distances(student_ep.query, protos)
    d_t = pairwise_distances(teacher_ep.query, t_protos)
    ps = softmax(-d / student_ep.tau)
    values, grad_p = _skl_rows(ps, softmax(-d_t / teacher_ep.tau))
    grad_d = -_softmax_backward(ps, grad_p) / (student_ep.tau * len(d))
    return float(values.mean()), protos, t_protos, d, grad_d


def nnskl_approx_grads(student_ep: EpisodeEmbeddings, protos: np.ndarray, t_protos: np.ndarray, d=None):
    """Approximate query gradient ``sum_k r_k (f_i - c_k) / ||f_i - c_k||``.

    ``r_k = (||f_i - c_k|| - ||f_i - c_hat_k||) / K`` compares the student
    query against the student centers ``c_k`` and the teacher centers
    ``c_hat_k``. Returns ``(grads, r)``; no 1/|Q| factor is applied.
    """
    if d is None:
        d = pairwise_distances(student_ep.query, protos)
    r = (d - pairwise_distances(student_ep.query, t_protos)) / student_ep.k_shot
    grads, _ = _distance_backward(student_ep.query, protos, d, r)
    return grads, r


def nnskl_loss(student_ep: EpisodeEmbeddings, teacher_ep: EpisodeEmbeddings):
    """Mean symmetric KL between the two nearest-centroid distributions.

    Returns ``(loss, exact_query_grads, approx_query_grads)``. The exact grads
    hold the student prototypes fixed, matching the approximate form's scope.
    """
    loss, protos, t_protos, d, grad_d = _nnskl_parts(student_ep, teacher_ep)
    exact, _ = _distance_backward(student_ep.query, protos, d, grad_d)
    approx, _ = nnskl_approx_grads(student_ep, protos, t_protos, d)
    return loss, exact, approx


def nnskl_loss_full(student_ep: EpisodeEmbeddings, teacher_ep: EpisodeEmbeddings):
    """NNSKL with exact gradients for student queries and supports."""
    loss, protos, _, d, grad_d = _nnskl_parts(student_ep, teacher_ep)
    dq, dc = _distance_backward(student_ep.query, protos, d, grad_d)
    return loss, dq, _scatter_to_support(student_ep, dc)


def pretrain_loss(logits, labels, params: ModelParams | None = None, weight_decay: float = 0.0):
    """Batch-mean cross-entropy, plus ``weight_decay / 2 * ||params||^2`` when params are given.

    The returned gradient covers the cross-entropy only; the regularizer's
    gradient is applied by the optimizer's weight decay.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) != len(z):
        raise ValueError("one label per logit row required")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"label out of range [0, {z.shape[1]})")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(len(y))
    loss = float(np.mean(lse - z[rows, y]))
    if params is not None and weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(t * t)) for t in params.tensors())
    grad = softmax(z)
    grad[rows, y] -= 1.0
    return loss, grad / len(y)


def meta_loss(sc: float, skl: float, nnskl: float, lambda1: float = 1.0, lambda2: float = 1.0) -> float:
    return sc + lambda1 * skl + lambda2 * nnskl


def episode_objective(
    student_ep: EpisodeEmbeddings,
    teacher_ep: EpisodeEmbeddings | None,
    params: ModelParams,
    skl_embeds: np.ndarray | None,
    teacher_skl_logits: np.ndarray | None,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    nnskl_grad: str = "exact",
) -> LossReport:
    """Combined meta objective for one episode plus one SKL batch.

    Terms with a zero weight are skipped entirely (reported as 0). With
    ``nnskl_grad="paper_approx"`` the NNSKL term contributes the approximate
    query gradient scaled by 1/|Q| and nothing to the supports.
    """
    sc, dq, ds = sc_loss_full(student_ep)
    skl = nnskl = 0.0
    head_grads = skl_dembed = None
    if lambda2:
        if teacher_ep is None:
            raise ValueError("NNSKL needs teacher episode embeddings")
        if nnskl_grad == "exact":
            nnskl, nq, ns = nnskl_loss_full(student_ep, teacher_ep)
            dq = dq + lambda2 * nq
            ds = ds + lambda2 * ns
        elif nnskl_grad == "paper_approx":
            nnskl, _, approx = nnskl_loss(student_ep, teacher_ep)
            dq = dq + lambda2 * approx / len(approx)
        else:
            raise ValueError(f"unknown nnskl_grad mode {nnskl_grad!r}")
    if lambda1:
        if skl_embeds is None or teacher_skl_logits is None:
            raise ValueError("SKL needs a batch of student embeddings and teacher logits")
        skl, g_logits = skl_loss(classify_logits(params, skl_embeds), teacher_skl_logits)
        g_logits = lambda1 * g_logits
        dw, db, skl_dembed = head_backward(params, skl_embeds, g_logits)
        head_grads = (dw, db)
    return LossReport(
        sc=sc,
        skl=skl,
        nnskl=nnskl,
        meta=meta_loss(sc, skl, nnskl, lambda1, lambda2),
        grads_wrt_query_embeds=dq,
        grads_wrt_support_embeds=ds,
        grads_wrt_head=head_grads,
        grads_wrt_skl_embeds=skl_dembed,
    )


def gradient_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two flattened gradients (diagnostic; 0 if either is zero)."""
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))
