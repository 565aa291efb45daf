"""Training objectives.

cross_entropy        masked node classification loss
phi                  exp(cosine / temperature) similarity kernel
fnsc_loss            supervised cross-view node contrast: each labeled query
                     embedding is pulled toward key embeddings of its class
                     and pushed from keys of other classes; the per-positive
                     denominator is that positive plus all negatives
fgsd_loss            neighbor-similarity distillation: KL from the frozen
                     reference model's neighbor-similarity distribution to
                     the local one, averaged over nodes with neighbors
total_loss           ce + lambda_c * fnsc + lambda_d * fgsd
prox_term            (mu/2) * ||theta - theta_ref||^2 proximal penalty

All differentiable paths are built from autodiff ops; frozen-side inputs
are plain arrays. Cosine denominators are clamped at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph

__all__ = [
    "FnscConfig",
    "FgsdConfig",
    "cross_entropy",
    "phi",
    "fnsc_loss",
    "similarity_distribution",
    "fgsd_loss",
    "total_loss",
    "prox_term",
]

KEY_SOURCES = ("global", "local")


@dataclass(frozen=True)
class FnscConfig:
    tau: float = 0.1
    lambda_c: float = 1.0
    key_source: str = "global"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"contrast temperature must be positive, got {self.tau}")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be non-negative")
        if self.key_source not in KEY_SOURCES:
            raise ValueError(f"key_source must be one of {KEY_SOURCES}, got {self.key_source!r}")


@dataclass(frozen=True)
class FgsdConfig:
    omega: float = 5.0
    lambda_d: float = 1.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"distillation temperature must be positive, got {self.omega}")
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be non-negative")


def cross_entropy(logits: Tensor, labels: np.ndarray, mask_idx) -> Tensor:
    """Mean over masked nodes of -log softmax(z_i)[label_i]."""
    idx = np.asarray(mask_idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cross_entropy requires a non-empty node mask")
    picked = ad.gather_rows(logits, idx)
    log_probs = ad.row_log_softmax(picked)
    coeff = np.zeros(picked.data.shape)
    coeff[np.arange(idx.size), np.asarray(labels)[idx]] = -1.0 / idx.size
    return ad.dot(log_probs, Tensor(coeff))


def phi(h_i, h_j, tau: float) -> float:
    """exp(cos(h_i, h_j) / tau); errors on zero vectors (cosine undefined)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    a = np.asarray(getattr(h_i, "data", h_i), dtype=np.float64).ravel()
    b = np.asarray(getattr(h_j, "data", h_j), dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.exp((a @ b) / (na * nb) / tau))


def fnsc_loss(h_query: Tensor, h_key, labels: np.ndarray, labeled_idx, config: FnscConfig) -> Tensor:
    """Supervised cross-view contrast over the labeled nodes.

    Queries and keys are aligned on node ids; the positive set of query i
    is every labeled key with the same class (including key i itself), the
    negative set is every other labeled key. Per positive p the term is
    -log(phi(q_i,k_p) / (phi(q_i,k_p) + sum_negatives)), averaged by 1/|P_i|
    per query and then over queries.
    """
    idx = np.asarray(labeled_idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("fnsc_loss requires labeled query nodes")
    y = np.asarray(labels)[idx]
    if np.unique(y).size < 2:
        raise ValueError("fnsc_loss requires at least two classes among the labeled nodes")

    q = ad.row_l2_normalize(ad.gather_rows(h_query, idx))
    k = ad.row_l2_normalize(ad.gather_rows(ad.as_tensor(h_key), idx))
    sims = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / config.tau)

    pos = (y[:, None] == y[None, :])
    if np.any(pos.sum(axis=1) == 0):
        raise ValueError("some query class has no key member")
    neg = ~pos

    # shift each row by its max (a constant w.r.t. the graph: the expression
    # is mathematically independent of the shift) before exponentiating
    shift = sims.data.max(axis=1, keepdims=True)
    e = ad.exp(ad.sub(sims, Tensor(shift)))
    neg_sum = ad.row_sum(ad.mul(e, Tensor(neg.astype(np.float64))))
    log_den = ad.log(ad.add(e, neg_sum))  # (n, n); only positive cells are read
    per_pair = ad.sub(ad.add(log_den, Tensor(shift)), sims)

    weights = pos.astype(np.float64)
    weights /= weights.sum(axis=1, keepdims=True)  # 1/|P_i| per row
    weights /= idx.size  # mean over queries
    return ad.dot(per_pair, Tensor(weights))


def _directed_pairs(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Both directions of every stored edge, sorted by (src, dst)."""
    if graph.num_edges == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    src = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    dst = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    order = np.lexsort((dst, src))
    return src[order], dst[order]


def _segment_log_softmax_np(values: np.ndarray, segments: np.ndarray) -> np.ndarray:
    starts = np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]])
    counts = np.diff(np.r_[starts, segments.size])
    shifted = values - np.repeat(np.maximum.reduceat(values, starts), counts)
    lse = np.log(np.repeat(np.add.reduceat(np.exp(shifted), starts), counts))
    return shifted - lse


def similarity_distribution(logits: np.ndarray, i: int, neighbor_ids, omega: float) -> np.ndarray:
    """softmax over j in A_i of (z_i . z_j) / omega, aligned with neighbor_ids."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    z = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    ids = np.asarray(list(neighbor_ids), dtype=np.int64)
    if ids.size == 0:
        raise ValueError(f"node {i} has no neighbors; similarity distribution undefined")
    scores = (z[ids] @ z[i]) / omega
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


def fgsd_loss(z_local: Tensor, z_global: np.ndarray, graph: Graph, omega: float) -> Tensor:
    """Mean over nodes with neighbors of KL(reference similarities || local).

    Neighbor sets come from the stored adjacency of `graph`; logits may come
    from augmented views. Nodes without neighbors are skipped.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    src, dst = _directed_pairs(graph)
    if src.size == 0:
        return Tensor(0.0)
    n_eligible = np.unique(src).size

    zg = np.asarray(getattr(z_global, "data", z_global), dtype=np.float64)
    ref_scores = (zg[src] * zg[dst]).sum(axis=1) / omega
    ref_log = _segment_log_softmax_np(ref_scores, src)
    ref = np.exp(ref_log)

    local_scores = ad.scale(ad.row_dot(ad.gather_rows(z_local, src), ad.gather_rows(z_local, dst)), 1.0 / omega)
    local_log = ad.segment_log_softmax(local_scores, src)

    kl_terms = ad.mul(Tensor(ref), ad.sub(Tensor(ref_log), local_log))
    return ad.scale(ad.reduce_sum(kl_terms), 1.0 / n_eligible)


def total_loss(ce, fnsc, fgsd, lambda_c: float, lambda_d: float) -> Tensor:
    """ce + lambda_c * fnsc + lambda_d * fgsd (components already averaged)."""
    out = ad.as_tensor(ce)
    if lambda_c != 0.0:
        out = ad.add(out, ad.scale(fnsc, lambda_c))
    if lambda_d != 0.0:
        out = ad.add(out, ad.scale(fgsd, lambda_d))
    return out


def prox_term(params, reference, mu: float) -> Tensor:
    """(mu/2) * squared L2 distance between a parameter list and a reference."""
    if len(params) != len(reference):
        raise ValueError("parameter lists must align")
    total = None
    for p, r in zip(params, reference):
        r = np.asarray(r)
        if p.data.shape != r.shape:
            raise ValueError(f"parameter shape mismatch: {p.data.shape} vs {r.shape}")
        d = ad.sub(p, Tensor(r))
        sq = ad.reduce_sum(ad.mul(d, d))
        total = sq if total is None else ad.add(total, sq)
    return ad.scale(total, 0.5 * mu)
