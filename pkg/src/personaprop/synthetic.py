"""Seeded synthetic instances: random purchase graphs and planted persona communities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import EdgeRecord, PurchaseGraph, build_graph, BipartiteGraph
from .personas import PersonaCatalog


def random_bipartite(n_users: int, n_items: int, n_edges: int, rng: np.random.Generator) -> BipartiteGraph:
    """Uniformly random simple bipartite graph with exactly ``n_edges`` edges."""
    if n_edges > n_users * n_items:
        raise ValueError("too many edges for a simple graph")
    flat = rng.choice(n_users * n_items, size=n_edges, replace=False)
    pairs = [(int(f // n_items), int(f % n_items)) for f in np.sort(flat)]
    return BipartiteGraph.from_pairs(n_users, n_items, pairs)


def random_label_matrix(
    n_users: int, n_personas: int, prototype_fraction: float, rng: np.random.Generator, max_personas: int = 3
) -> np.ndarray:
    """Row-normalized labels on a random prototype subset; other rows are zero."""
    labels = np.zeros((n_users, n_personas))
    n_protos = max(1, int(round(prototype_fraction * n_users)))
    for u in rng.choice(n_users, size=n_protos, replace=False):
        k = int(rng.integers(1, min(max_personas, n_personas) + 1))
        chosen = rng.choice(n_personas, size=k, replace=False)
        labels[u, chosen] = 1.0 / k
    return labels


@dataclass
class PlantedInstance:
    purchases: PurchaseGraph
    catalog: PersonaCatalog
    planted: dict[str, list[str]]
    community: np.ndarray


def planted_communities(
    community_sizes: list[int],
    items_per_community: list[int],
    degree: int,
    homophily: float,
    rng: np.random.Generator,
    prefix: str = "",
) -> PlantedInstance:
    """Users of community ``c`` buy mostly items of community ``c`` and carry persona ``c``.

    Each user buys ``degree`` distinct items; each purchase stays inside the
    user's community with probability ``homophily``.
    """
    n_comm = len(community_sizes)
    catalog = PersonaCatalog([(f"Persona {c}", f"shopper from community {c}") for c in range(n_comm)])
    item_comm = np.repeat(np.arange(n_comm), items_per_community)
    items_of = [np.flatnonzero(item_comm == c) for c in range(n_comm)]
    n_items = len(item_comm)
    edges, planted, community = [], {}, []
    uid = 0
    for c, size in enumerate(community_sizes):
        for _ in range(size):
            key = f"{prefix}u{uid}"
            bought: set[int] = set()
            while len(bought) < min(degree, n_items):
                if rng.random() < homophily:
                    bought.add(int(rng.choice(items_of[c])))
                else:
                    bought.add(int(rng.integers(n_items)))
            for v in sorted(bought):
                edges.append(EdgeRecord(key, f"{prefix}i{v}", int(rng.integers(1, 4))))
            planted[key] = [catalog.names[c]]
            community.append(c)
            uid += 1
    purchases = build_graph(edges, users=[f"{prefix}u{i}" for i in range(uid)], items=[f"{prefix}i{v}" for v in range(n_items)])
    return PlantedInstance(purchases, catalog, planted, np.array(community))
