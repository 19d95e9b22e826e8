"""Exact attention and user-persona affinity by sparse products, plus a Monte-Carlo check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ITEM, USER, BipartiteGraph, IsolatedNodeError
from .personas import LabelMatrix

DENSE_USER_LIMIT = 20_000


class DenseTooLargeError(MemoryError):
    pass


@dataclass
class AttentionMatrix:
    values: np.ndarray
    walk_cap: int


@dataclass
class AffinityMatrix:
    values: np.ndarray
    epsilon: float
    walk_cap: int
    reports: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_walk_cap(walk_cap: int) -> None:
    if walk_cap < 1:
        raise ValueError("walk_cap must be >= 1")


def attention(graph: BipartiteGraph, walk_cap: int, max_users: int = DENSE_USER_LIMIT) -> AttentionMatrix:
    """Mean over 1..walk_cap round trips of user-to-user walk probabilities (dense)."""
    _check_walk_cap(walk_cap)
    n = graph.user_count
    if n == 0:
        raise ValueError("graph has no users")
    if n > max_users:
        raise DenseTooLargeError(
            f"{n} users exceeds the dense attention limit of {max_users}; use the revaff solver"
        )
    step = (graph.user_to_item @ graph.item_to_user).toarray()
    power = np.eye(n)
    acc = np.zeros((n, n))
    for _ in range(walk_cap):
        power = power @ step
        acc += power
    return AttentionMatrix(acc / walk_cap, walk_cap)


def exact_affinity(graph: BipartiteGraph, labels: LabelMatrix | np.ndarray, walk_cap: int) -> AffinityMatrix:
    """Attention times label matrix, without materializing the attention matrix."""
    _check_walk_cap(walk_cap)
    x = labels.toarray() if isinstance(labels, LabelMatrix) else np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != graph.user_count:
        raise ValueError(f"label matrix shape {x.shape} does not match {graph.user_count} users")
    fwd, back = graph.user_to_item, graph.item_to_user
    acc = np.zeros_like(x, dtype=np.float64)
    for _ in range(walk_cap):
        x = fwd @ (back @ x)
        acc += x
    return AffinityMatrix(acc / walk_cap, 0.0, walk_cap)


def mc_attention(
    graph: BipartiteGraph, start_user: int, walk_cap: int, n_walks: int, seed: int | None = None
) -> np.ndarray:
    """Monte-Carlo estimate of one attention row from simulated round-trip walks."""
    _check_walk_cap(walk_cap)
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    if not graph.user_adj[start_user]:
        raise IsolatedNodeError(f"user {start_user} has no neighbors")
    rng = np.random.default_rng(seed)
    u_ptr, u_idx = graph.csr[USER]
    v_ptr, v_idx = graph.csr[ITEM]
    u_deg, v_deg = np.diff(u_ptr), np.diff(v_ptr)

    row = np.zeros(graph.user_count)
    for length in range(1, walk_cap + 1):
        pos = np.full(n_walks, start_user, dtype=np.int64)
        for _ in range(length):
            items = u_idx[u_ptr[pos] + (rng.random(n_walks) * u_deg[pos]).astype(np.int64)]
            pos = v_idx[v_ptr[items] + (rng.random(n_walks) * v_deg[items]).astype(np.int64)]
        row += np.bincount(pos, minlength=graph.user_count) / n_walks
    return row / walk_cap
