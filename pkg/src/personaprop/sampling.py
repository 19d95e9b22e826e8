"""Diversity-uncertainty selection of users to send to the labeler."""
from __future__ import annotations

import logging
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

SMOOTHING = 1e-12


def normalize_affinity_row(row, delta: float = SMOOTHING) -> np.ndarray:
    """Affinity row -> smoothed probability vector; an all-zero row becomes uniform."""
    row = np.asarray(row, dtype=np.float64)
    total = row.sum()
    if total <= 0:
        return np.full(row.shape, 1.0 / row.size)
    q = row / total + delta
    return q / q.sum()


def normalize_affinity(values: np.ndarray, delta: float = SMOOTHING) -> np.ndarray:
    """Row-wise ``normalize_affinity_row`` for a whole affinity matrix."""
    values = np.asarray(values, dtype=np.float64)
    totals = values.sum(axis=1, keepdims=True)
    out = np.full(values.shape, 1.0 / values.shape[1])
    reached = totals[:, 0] > 0
    q = values[reached] / totals[reached] + delta
    out[reached] = q / q.sum(axis=1, keepdims=True)
    return out


def du_score(q, q_user) -> float | np.ndarray:
    """KL(q || q_user) + H(q_user) in nats, with 0 log 0 = 0.

    ``q_user`` may be a single distribution or a matrix of them (one per row).
    """
    q = np.asarray(q, dtype=np.float64)
    qu = np.asarray(q_user, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_terms = np.where(q > 0, q * (np.log(q) - np.log(qu)), 0.0)
        ent_terms = np.where(qu > 0, -qu * np.log(qu), 0.0)
    scores = kl_terms.sum(axis=-1) + ent_terms.sum(axis=-1)
    return float(scores) if scores.ndim == 0 else scores


def select_batch(
    iteration: int,
    batch_size: int,
    pool: Iterable[int],
    seed: int | None = None,
    q: np.ndarray | None = None,
    affinity: np.ndarray | None = None,
    return_scores: bool = False,
):
    """Pick up to ``batch_size`` users from ``pool``.

    The first iteration (or any iteration without a persona distribution)
    samples uniformly without replacement; later ones take the highest DU
    scores, ties going to the smaller user index.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pool = np.array(sorted(set(pool)), dtype=np.int64)
    if pool.size == 0:
        log.warning("sampling pool is empty; budget left unspent")
        return ([], {}) if return_scores else []
    if iteration <= 1 or q is None or affinity is None:
        if iteration > 1:
            log.warning("no persona distribution yet at iteration %d; sampling uniformly", iteration)
        rng = np.random.default_rng(seed)
        chosen = rng.choice(pool, size=min(batch_size, pool.size), replace=False)
        picked = sorted(int(u) for u in chosen)
        return (picked, {}) if return_scores else picked
    scores = du_score(q, normalize_affinity(affinity[pool]))
    order = np.lexsort((pool, -scores))[:batch_size]
    picked = sorted(int(u) for u in pool[order])
    if return_scores:
        return picked, dict(zip(pool.tolist(), scores.tolist()))
    return picked
