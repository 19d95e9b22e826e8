"""Reverse residual push for epsilon-approximate user-persona affinity columns.

Each hop ``t`` in ``0..2*walk_cap`` keeps an estimate vector ``s[t]`` and a
residual vector ``p[t]`` (users on even hops, items on odd hops). Pushing the
residual of node ``w`` at hop ``t`` hands ``p[t][w] / deg(x)`` to every
neighbor ``x`` at hop ``t + 1``. Residuals below ``epsilon / (2 * walk_cap)``
are left in place; every hop then lags its exact value by at most that much
per preceding hop, which bounds the returned average of the even hops by
``epsilon``.
"""
from __future__ import annotations

import heapq
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .exact import AffinityMatrix
from .graph import BipartiteGraph
from .personas import LabelMatrix


@dataclass
class ApproximationReport:
    epsilon: float
    pushes: int = 0
    wall_time: float = 0.0
    max_frontier: int = 0
    edge_work: int = 0
    persona: int | None = None

    def to_json(self) -> dict:
        return {
            "persona": self.persona,
            "epsilon": self.epsilon,
            "pushes": self.pushes,
            "wall_time_ms": round(self.wall_time * 1000.0, 3),
            "max_frontier": self.max_frontier,
        }


class ReversePush:
    """Residual-push state for one label column; ``run`` drives it to the threshold."""

    def __init__(self, graph: BipartiteGraph, label_column: Mapping[int, float], epsilon: float, walk_cap: int):
        if walk_cap < 1:
            raise ValueError("walk_cap must be >= 1")
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        self.graph = graph
        self.epsilon = float(epsilon)
        self.walk_cap = walk_cap
        self.hops = 2 * walk_cap
        self.threshold = self.epsilon / self.hops
        self.s: list[dict[int, float]] = [{} for _ in range(self.hops + 1)]
        self.p: list[dict[int, float]] = [{} for _ in range(self.hops + 1)]
        self.pushes = 0
        self.edge_work = 0
        self.live = 0
        self.max_frontier = 0
        self._heap: list[tuple[float, int, int]] = []
        for u, x in sorted(label_column.items()):
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"label value {x} for user {u} outside [0, 1]")
            if x > 0:
                self.s[0][u] = x
                self.p[0][u] = x
                self.live += 1
                if x >= self.threshold:
                    self._heap.append((-x, 0, u))
        heapq.heapify(self._heap)
        self.max_frontier = self.live

    def run(self) -> "ReversePush":
        g = self.graph
        adj = (g.user_adj, g.item_adj)
        inv_deg = (
            [1.0 / d if d else 0.0 for d in g.user_degrees.tolist()],
            [1.0 / d if d else 0.0 for d in g.item_degrees.tolist()],
        )
        heap, p, s = self._heap, self.p, self.s
        threshold, last = self.threshold, self.hops - 1
        pop, push = heapq.heappop, heapq.heappush
        while heap:
            neg, t, w = pop(heap)
            r = p[t].get(w, 0.0)
            if r != -neg:
                continue  # stale entry, a fresher one for (t, w) exists or it was pushed
            if r < threshold or r <= 0.0:
                break
            side = t & 1
            nbrs = adj[side][w]
            recv_inv = inv_deg[1 - side]
            nt = t + 1
            s_next, p_next = s[nt], p[nt]
            for x in nbrs:
                d = r * recv_inv[x]
                s_next[x] = s_next.get(x, 0.0) + d
                if nt <= last:
                    old = p_next.get(x, 0.0)
                    if old == 0.0:
                        self.live += 1
                    nv = old + d
                    p_next[x] = nv
                    if nv >= threshold:
                        push(heap, (-nv, nt, x))
            del p[t][w]
            self.live -= 1
            self.pushes += 1
            self.edge_work += len(nbrs)
            if self.live > self.max_frontier:
                self.max_frontier = self.live
        return self

    def estimate(self) -> np.ndarray:
        out = np.zeros(self.graph.user_count)
        for ell in range(1, self.walk_cap + 1):
            hop = self.s[2 * ell]
            if hop:
                idx = np.fromiter(hop.keys(), dtype=np.int64, count=len(hop))
                out[idx] += np.fromiter(hop.values(), dtype=np.float64, count=len(hop))
        return out / self.walk_cap

    def max_residual(self, hops: range | None = None) -> float:
        hops = hops if hops is not None else range(self.hops)
        return max((max(self.p[t].values(), default=0.0) for t in hops), default=0.0)


def _as_column(label_column) -> dict[int, float]:
    if isinstance(label_column, Mapping):
        return {int(k): float(v) for k, v in label_column.items()}
    arr = np.asarray(label_column, dtype=np.float64)
    nz = np.flatnonzero(arr)
    return dict(zip(nz.tolist(), arr[nz].tolist()))


def revaff_column(graph: BipartiteGraph, label_column, epsilon: float, walk_cap: int):
    """Approximate one affinity column; returns ``(column, ApproximationReport)``.

    Every entry of the column is within ``epsilon`` of the exact affinity and
    never above it.
    """
    start = time.perf_counter()
    state = ReversePush(graph, _as_column(label_column), epsilon, walk_cap).run()
    column = state.estimate()
    report = ApproximationReport(
        epsilon=float(epsilon),
        pushes=state.pushes,
        wall_time=time.perf_counter() - start,
        max_frontier=state.max_frontier,
        edge_work=state.edge_work,
    )
    return column, report


def _column_job(args):
    graph, column, epsilon, walk_cap = args
    return revaff_column(graph, column, epsilon, walk_cap)


def revaff_all(
    graph: BipartiteGraph,
    labels: LabelMatrix | np.ndarray,
    epsilon: float,
    walk_cap: int,
    workers: int = 1,
) -> AffinityMatrix:
    """Run the column solver for every persona; per-column reports are attached."""
    if isinstance(labels, LabelMatrix):
        n_rows, n_personas = labels.shape
        columns = [labels.column(m) for m in range(n_personas)]
    else:
        arr = np.asarray(labels, dtype=np.float64)
        n_rows, n_personas = arr.shape
        columns = [_as_column(arr[:, m]) for m in range(n_personas)]
    if n_rows != graph.user_count:
        raise ValueError(f"label matrix has {n_rows} rows, graph has {graph.user_count} users")

    jobs = [(graph, col, epsilon, walk_cap) for col in columns]
    if workers > 1 and n_personas > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_column_job, jobs))
    else:
        results = [_column_job(job) for job in jobs]

    values = np.zeros((graph.user_count, n_personas))
    reports = []
    for m, (col, report) in enumerate(results):
        values[:, m] = col
        report.persona = m
        reports.append(report)
    return AffinityMatrix(values, float(epsilon), walk_cap, reports)


def aggregate_report(reports: list[ApproximationReport]) -> dict:
    return {
        "epsilon": reports[0].epsilon if reports else None,
        "pushes": sum(r.pushes for r in reports),
        "wall_time_ms": round(sum(r.wall_time for r in reports) * 1000.0, 3),
        "max_frontier": max((r.max_frontier for r in reports), default=0),
        "columns": [r.to_json() for r in reports],
    }

