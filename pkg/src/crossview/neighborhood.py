"""Instance-level neighborhood losses over per-epoch feature snapshots.

Three objectives per query and direction, all against frozen instance
memories:

* alignment: softmax cross-entropy over the threshold-filtered set
  (similarity strictly above ratio * max similarity), logits divided by
  the temperature;
* consistency: KL divergence to uniform of the softmax over the expanded
  top-k set, raw similarities, always >= 0;
* mutual information: negative KL to uniform over the strict top-k set,
  raw similarities, always in [-ln k, 0].

For intra-view directions the query's own memory row is excluded from
every candidate pool before selection; otherwise it would dominate them
with similarity 1.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .numcore import as_matrix, top_k_indices

__all__ = [
    "InstanceMemory",
    "NeighborWeights",
    "build_instance_memory",
    "threshold_neighborhood",
    "topk_neighborhoods",
    "alignment_loss",
    "consistency_loss",
    "mutual_info_loss",
    "uniform_divergence",
    "neighborhood_total",
]

_UNIT_TOL = 1e-9


@dataclass
class InstanceMemory:
    """Frozen per-instance embedding bank; row i is instance i all epoch."""

    features: np.ndarray
    view: str

    @property
    def size(self) -> int:
        return self.features.shape[0]


def build_instance_memory(embeddings, view: str) -> InstanceMemory:
    embeddings = as_matrix(embeddings, "embeddings").copy()
    if embeddings.shape[0] == 0:
        raise ValueError("cannot build an empty instance memory")
    norms = np.sqrt(np.einsum("ij,ij->i", embeddings, embeddings))
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("instance memory rows must be unit-norm")
    return InstanceMemory(features=embeddings, view=view)


def _query_sims(q, mem: InstanceMemory) -> tuple[np.ndarray, np.ndarray, float]:
    """Cosine similarities of q to every memory row, plus q-hat and |q|."""
    q = np.asarray(q, dtype=np.float64).ravel()
    qn = float(np.sqrt(q @ q))
    if qn == 0.0:
        raise ValueError("zero-norm query")
    q_hat = q / qn
    sims = mem.features @ q_hat
    return sims, q_hat, qn


def _masked(sims: np.ndarray, exclude: int | None) -> np.ndarray:
    if exclude is None:
        return sims
    out = sims.copy()
    out[exclude] = -np.inf
    return out


def threshold_neighborhood(q, mem: InstanceMemory, ratio: float, exclude: int | None = None) -> np.ndarray:
    """Indices with similarity strictly above ratio * max similarity.

    The comparison is verbatim, so with a negative maximum the set can be
    empty; callers treat an empty set as a zero-loss no-op.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"threshold ratio must be in (0, 1), got {ratio}")
    if mem.size == 0:
        raise ValueError("empty instance memory")
    sims, _, _ = _query_sims(q, mem)
    sims = _masked(sims, exclude)
    cutoff = ratio * sims.max()
    return np.flatnonzero(sims > cutoff).astype(np.int64)


def topk_neighborhoods(
    q, mem: InstanceMemory, k_strict: int, k_expanded: int, exclude: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Exact strict/expanded top-k index lists, ties broken by lower index."""
    pool = mem.size - (1 if exclude is not None else 0)
    if not 1 <= k_strict <= k_expanded <= pool:
        raise ValueError(
            f"need 1 <= k_strict <= k_expanded <= {pool}, got {k_strict}, {k_expanded}"
        )
    sims, _, _ = _query_sims(q, mem)
    wide = top_k_indices(_masked(sims, exclude), k_expanded)
    return wide[:k_strict].copy(), wide


def _cosine_chain(grad_s, picked, sims, mem, q_hat, qn) -> np.ndarray:
    # d cos(q, f_u) / dq = (f_u - cos * q_hat) / |q|
    f = mem.features[picked]
    s = sims[picked]
    return (f.T @ grad_s - float(grad_s @ s) * q_hat) / qn


def alignment_loss(q, mem: InstanceMemory, omega, temperature: float) -> tuple[float, np.ndarray]:
    """Cross-entropy pulling q toward every member of its threshold set."""
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    omega = np.asarray(omega, dtype=np.int64)
    q = np.asarray(q, dtype=np.float64).ravel()
    if omega.size == 0:
        return 0.0, np.zeros_like(q)
    sims, q_hat, qn = _query_sims(q, mem)
    z = sims[omega] / temperature
    shift = z - z.max()
    lse = np.log(np.sum(np.exp(shift)))
    loss = float(omega.size * lse - shift.sum())
    p = np.exp(shift - lse)
    grad_s = (omega.size * p - 1.0) / temperature
    return loss, _cosine_chain(grad_s, omega, sims, mem, q_hat, qn)


def uniform_divergence(p) -> float:
    """KL(p || uniform) = sum p log(k p), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty distribution")
    nz = p > 0.0
    return float(np.sum(p[nz] * np.log(p.size * p[nz])))


def consistency_loss(q, mem: InstanceMemory, picked) -> tuple[float, np.ndarray]:
    """KL to uniform of the raw-similarity softmax over the expanded set."""
    picked = np.asarray(picked, dtype=np.int64)
    if picked.size == 0:
        raise ValueError("expanded neighborhood is empty")
    sims, q_hat, qn = _query_sims(q, mem)
    z = sims[picked]
    shift = z - z.max()
    lse = np.log(np.sum(np.exp(shift)))
    p = np.exp(shift - lse)
    logp = shift - lse
    entropy_term = float(p @ logp)
    loss = entropy_term + np.log(picked.size)
    grad_s = p * (logp - entropy_term)
    return float(loss), _cosine_chain(grad_s, picked, sims, mem, q_hat, qn)


def mutual_info_loss(q, mem: InstanceMemory, picked) -> tuple[float, np.ndarray]:
    """Negative KL to uniform over the strict set; bounded in [-ln k, 0]."""
    picked = np.asarray(picked, dtype=np.int64)
    if picked.size == 0:
        raise ValueError("strict neighborhood is empty")
    sims, q_hat, qn = _query_sims(q, mem)
    z = sims[picked]
    shift = z - z.max()
    lse = np.log(np.sum(np.exp(shift)))
    p = np.exp(shift - lse)
    logp = shift - lse
    entropy_term = float(p @ logp)
    loss = -(entropy_term + np.log(picked.size))
    grad_s = -p * (logp - entropy_term)
    return float(loss), _cosine_chain(grad_s, picked, sims, mem, q_hat, qn)


@dataclass
class NeighborWeights:
    threshold_ratio: float = 0.8
    k_strict: int = 5
    k_expanded: int = 20
    mutual_weight: float = 1.0
    consistency_weight: float = 1.0
    temperature: float = 0.05

    def validate(self) -> None:
        if not 0.0 < self.threshold_ratio < 1.0:
            raise ValueError("threshold_ratio must be in (0, 1)")
        if not 1 <= self.k_strict <= self.k_expanded:
            raise ValueError("need 1 <= k_strict <= k_expanded")
        if self.mutual_weight < 0.0 or self.consistency_weight < 0.0:
            raise ValueError("loss weights must be non-negative")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be positive")


def _clamped_ks(weights: NeighborWeights, pool: int) -> tuple[int, int]:
    k2 = weights.k_expanded
    if k2 > pool:
        warnings.warn(
            f"expanded neighborhood clamped from {k2} to {pool} available rows",
            stacklevel=3,
        )
        k2 = pool
    k1 = min(weights.k_strict, k2)
    return k1, k2


def _direction_loss(q, mem, weights, exclude, extra_omega) -> tuple[float, np.ndarray]:
    omega = threshold_neighborhood(q, mem, weights.threshold_ratio, exclude=exclude)
    if extra_omega is not None and len(extra_omega) > 0:
        omega = np.union1d(omega, np.asarray(extra_omega, dtype=np.int64))
        if exclude is not None:
            omega = omega[omega != exclude]
    k1, k2 = _clamped_ks(weights, mem.size - (1 if exclude is not None else 0))
    strict, expanded = topk_neighborhoods(q, mem, k1, k2, exclude=exclude)
    value, grad = alignment_loss(q, mem, omega, weights.temperature)
    mi, g_mi = mutual_info_loss(q, mem, strict)
    cons, g_cons = consistency_loss(q, mem, expanded)
    value += weights.mutual_weight * mi + weights.consistency_weight * cons
    grad = grad + weights.mutual_weight * g_mi + weights.consistency_weight * g_cons
    return value, grad


@dataclass
class NeighborhoodLoss:
    value: float
    drone_grads: np.ndarray
    sat_grads: np.ndarray


def neighborhood_total(
    drone_queries,
    drone_indices,
    sat_queries,
    sat_indices,
    mem_d: InstanceMemory,
    mem_s: InstanceMemory,
    weights: NeighborWeights,
    extra_cross_d=None,
    extra_cross_s=None,
) -> NeighborhoodLoss:
    """Sum of the four directional losses, each batch-averaged.

    drone_indices / sat_indices are each query's own row in its view's
    instance memory (used for intra-view self-exclusion); a negative index
    marks a query that is not a memory row, so nothing is excluded.
    extra_cross_d[i] optionally lists satellite rows force-included into
    drone query i's cross-view threshold set (and symmetrically for
    extra_cross_s), which is how refined pseudo-labels feed back into
    training.
    """
    weights.validate()
    drone_queries = as_matrix(drone_queries, "drone queries")
    sat_queries = as_matrix(sat_queries, "satellite queries")
    drone_indices = np.asarray(drone_indices, dtype=np.int64)
    sat_indices = np.asarray(sat_indices, dtype=np.int64)
    total = 0.0
    gd = np.zeros_like(drone_queries)
    gs = np.zeros_like(sat_queries)
    nd = drone_queries.shape[0]
    ns = sat_queries.shape[0]
    for i in range(nd):
        q = drone_queries[i]
        own = int(drone_indices[i])
        v_intra, g_intra = _direction_loss(q, mem_d, weights, own if own >= 0 else None, None)
        extra = None if extra_cross_d is None else extra_cross_d[i]
        v_cross, g_cross = _direction_loss(q, mem_s, weights, None, extra)
        total += (v_intra + v_cross) / nd
        gd[i] = (g_intra + g_cross) / nd
    for j in range(ns):
        q = sat_queries[j]
        own = int(sat_indices[j])
        v_intra, g_intra = _direction_loss(q, mem_s, weights, own if own >= 0 else None, None)
        extra = None if extra_cross_s is None else extra_cross_s[j]
        v_cross, g_cross = _direction_loss(q, mem_d, weights, None, extra)
        total += (v_intra + v_cross) / ns
        gs[j] = (g_intra + g_cross) / ns
    return NeighborhoodLoss(value=float(total), drone_grads=gd, sat_grads=gs)
