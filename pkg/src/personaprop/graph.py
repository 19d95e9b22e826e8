"""User-item purchase graph: edge ingestion, id mapping and uniform walk transitions."""
from __future__ import annotations

from bisect import bisect_left
import csv
import io
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

USER = "user"
ITEM = "item"
EDGE_HEADER = ("user_id", "item_id", "count")


class EdgeParseError(ValueError):
    """Malformed row in an edge file. ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GraphBuildError(ValueError):
    pass


class IsolatedNodeError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeRecord:
    user_id: str
    item_id: str
    count: int = 1

    def __post_init__(self):
        if not str(self.user_id) or not str(self.item_id):
            raise ValueError("edge ids must be non-empty")
        if self.count < 1:
            raise ValueError(f"purchase count must be >= 1, got {self.count}")


def load_edges(source: IO, fmt: str = "csv", header: bool | None = None) -> list[EdgeRecord]:
    """Parse ``user_id,item_id[,count]`` rows, merging repeated pairs by summing counts.

    ``source`` may be a binary or text stream; binary input is decoded as UTF-8.
    With ``header=None`` a first row equal to the canonical header is skipped.
    """
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"unknown edge format {fmt!r}")
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(source, delimiter="," if fmt == "csv" else "\t")

    merged: dict[tuple[str, str], int] = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if lineno == 1 and header is not False:
            if header or tuple(c.lower() for c in cells) == EDGE_HEADER[: len(cells)]:
                continue
        if len(cells) not in (2, 3):
            raise EdgeParseError(lineno, f"expected 2 or 3 fields, got {len(cells)}")
        user, item = cells[0], cells[1]
        if not user or not item:
            raise EdgeParseError(lineno, "empty user or item id")
        count = 1
        if len(cells) == 3:
            try:
                count = int(cells[2])
            except ValueError:
                raise EdgeParseError(lineno, f"count {cells[2]!r} is not an integer") from None
            if count < 1:
                raise EdgeParseError(lineno, f"count must be positive, got {count}")
        merged[(user, item)] = merged.get((user, item), 0) + count
    return [EdgeRecord(u, v, c) for (u, v), c in merged.items()]


def write_edges(records: Iterable[EdgeRecord], stream: IO[str], fmt: str = "csv", header: bool = True) -> None:
    writer = csv.writer(stream, delimiter="," if fmt == "csv" else "\t", lineterminator="\n")
    if header:
        writer.writerow(EDGE_HEADER)
    for rec in records:
        writer.writerow((rec.user_id, rec.item_id, rec.count))


class IdMap:
    """Bijection between external keys and dense indices in first-appearance order."""

    def __init__(self, keys: Iterable[str] = ()):
        self.keys: list[str] = []
        self._index: dict[str, int] = {}
        for key in keys:
            self.add(key)

    def add(self, key: str) -> int:
        key = str(key)
        idx = self._index.get(key)
        if idx is None:
            idx = self._index[key] = len(self.keys)
            self.keys.append(key)
        return idx

    def index(self, key: str) -> int:
        return self._index[str(key)]

    def get(self, key: str, default=None):
        return self._index.get(str(key), default)

    def __contains__(self, key) -> bool:
        return str(key) in self._index

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, idx: int) -> str:
        return self.keys[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self.keys == other.keys

    def write(self, stream: IO[str]) -> None:
        for i, key in enumerate(self.keys):
            stream.write(f"{i}\t{key}\n")

    @classmethod
    def read(cls, stream: IO[str]) -> "IdMap":
        rows = sorted((int(i), key) for i, key in (line.rstrip("\n").split("\t", 1) for line in stream if line.strip()))
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError("id map indices are not dense")
        return cls(key for _, key in rows)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Immutable bipartite purchase graph with both adjacency directions.

    ``user_counts[u][j]`` is the purchase multiplicity of edge ``(u, user_adj[u][j])``.
    Walks ignore multiplicities.
    """

    user_adj: tuple[tuple[int, ...], ...]
    item_adj: tuple[tuple[int, ...], ...]
    user_counts: tuple[tuple[int, ...], ...]

    @classmethod
    def from_pairs(
        cls,
        n_users: int,
        n_items: int,
        pairs: Iterable[tuple[int, int]],
        counts: Sequence[int] | None = None,
    ) -> "BipartiteGraph":
        user_sets: list[dict[int, int]] = [{} for _ in range(n_users)]
        item_sets: list[set[int]] = [set() for _ in range(n_items)]
        for k, (u, v) in enumerate(pairs):
            if not (0 <= u < n_users and 0 <= v < n_items):
                raise GraphBuildError(f"edge ({u}, {v}) out of range")
            c = 1 if counts is None else int(counts[k])
            user_sets[u][v] = user_sets[u].get(v, 0) + c
            item_sets[v].add(u)
        user_adj = tuple(tuple(sorted(s)) for s in user_sets)
        user_counts = tuple(tuple(s[v] for v in adj) for s, adj in zip(user_sets, user_adj))
        item_adj = tuple(tuple(sorted(s)) for s in item_sets)
        return cls(user_adj, item_adj, user_counts)

    @property
    def user_count(self) -> int:
        return len(self.user_adj)

    @property
    def item_count(self) -> int:
        return len(self.item_adj)

    @cached_property
    def user_degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.user_adj], dtype=np.int64)

    @cached_property
    def item_degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.item_adj], dtype=np.int64)

    @property
    def edge_count(self) -> int:
        return int(self.user_degrees.sum())

    def adjacency(self, side: str) -> tuple[tuple[int, ...], ...]:
        return self.user_adj if side == USER else self.item_adj

    def degree(self, side: str, node: int) -> int:
        return len(self.adjacency(side)[node])

    def isolated_users(self) -> list[int]:
        return [u for u, adj in enumerate(self.user_adj) if not adj]

    def isolated_items(self) -> list[int]:
        return [v for v, adj in enumerate(self.item_adj) if not adj]

    def purchases(self, user: int) -> list[tuple[int, int]]:
        return list(zip(self.user_adj[user], self.user_counts[user]))

    def edges(self) -> Iterable[tuple[int, int]]:
        for u, adj in enumerate(self.user_adj):
            for v in adj:
                yield u, v

    def validate(self) -> None:
        """Exhaustively check dual-adjacency consistency, ordering and degree sums."""
        for side, adj_lists, other in ((USER, self.user_adj, self.item_adj), (ITEM, self.item_adj, self.user_adj)):
            for w, adj in enumerate(adj_lists):
                for a, b in zip(adj, adj[1:]):
                    if a >= b:
                        raise GraphBuildError(f"{side} {w}: adjacency not strictly increasing")
                for x in adj:
                    if not 0 <= x < len(other):
                        raise GraphBuildError(f"{side} {w}: neighbor {x} out of range")
        mirrored = sum(1 for u, adj in enumerate(self.user_adj) for v in adj if _contains(self.item_adj[v], u))
        total_item = int(self.item_degrees.sum())
        if mirrored != self.edge_count or total_item != self.edge_count:
            raise GraphBuildError("user and item adjacency describe different edge sets")
        if any(len(c) != len(a) for c, a in zip(self.user_counts, self.user_adj)):
            raise GraphBuildError("purchase counts misaligned with adjacency")

    @cached_property
    def user_to_item(self) -> sp.csr_matrix:
        """Row-stochastic |U| x |V| matrix with ``1/deg(u)`` on each edge."""
        return _transition(self.user_adj, self.item_count)

    @cached_property
    def item_to_user(self) -> sp.csr_matrix:
        """Row-stochastic |V| x |U| matrix with ``1/deg(v)`` on each edge."""
        return _transition(self.item_adj, self.user_count)

    @cached_property
    def csr(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """(indptr, indices) arrays for each side."""
        out = {}
        for side, adj_lists in ((USER, self.user_adj), (ITEM, self.item_adj)):
            indptr = np.zeros(len(adj_lists) + 1, dtype=np.int64)
            indptr[1:] = np.cumsum([len(a) for a in adj_lists])
            indices = np.fromiter((x for a in adj_lists for x in a), dtype=np.int64, count=int(indptr[-1]))
            out[side] = (indptr, indices)
        return out


def _contains(sorted_seq: Sequence[int], x: int) -> bool:
    i = bisect_left(sorted_seq, x)
    return i < len(sorted_seq) and sorted_seq[i] == x


def _transition(adj_lists, n_cols: int) -> sp.csr_matrix:
    indptr = np.zeros(len(adj_lists) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adj_lists])
    indices = np.fromiter((x for a in adj_lists for x in a), dtype=np.int64, count=int(indptr[-1]))
    data = np.concatenate([np.full(len(a), 1.0 / len(a)) for a in adj_lists if a] or [np.zeros(0)])
    return sp.csr_matrix((data, indices, indptr), shape=(len(adj_lists), n_cols))


class PurchaseGraph(NamedTuple):
    graph: BipartiteGraph
    users: IdMap
    items: IdMap

    def records(self) -> list[EdgeRecord]:
        g = self.graph
        return [
            EdgeRecord(self.users[u], self.items[v], c)
            for u in range(g.user_count)
            for v, c in zip(g.user_adj[u], g.user_counts[u])
        ]


def build_graph(
    edges: Sequence[EdgeRecord],
    users: Iterable[str] = (),
    items: Iterable[str] = (),
) -> PurchaseGraph:
    """Index edges densely in first-appearance order and build the graph.

    Extra ``users``/``items`` keys are indexed first and may end up isolated.
    """
    if not edges:
        raise GraphBuildError("edge list is empty")
    user_map, item_map = IdMap(users), IdMap(items)
    pairs, counts = [], []
    for rec in edges:
        pairs.append((user_map.add(rec.user_id), item_map.add(rec.item_id)))
        counts.append(rec.count)
    graph = BipartiteGraph.from_pairs(len(user_map), len(item_map), pairs, counts)
    iso_u, iso_v = graph.isolated_users(), graph.isolated_items()
    if iso_u or iso_v:
        log.warning("graph has %d isolated users and %d isolated items", len(iso_u), len(iso_v))
    return PurchaseGraph(graph, user_map, item_map)


def walk_step_distribution(graph: BipartiteGraph, node: int, side: str = USER) -> dict[int, float]:
    """One uniform walk step from ``node``: neighbor on the opposite side -> probability."""
    adj = graph.adjacency(side)[node]
    if not adj:
        raise IsolatedNodeError(f"{side} {node} has no neighbors")
    p = 1.0 / len(adj)
    return {w: p for w in adj}
