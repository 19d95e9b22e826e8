"""Readers and writers for the files the engine produces."""
from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .graph import IdMap, PurchaseGraph
from .personas import PersonaCatalog, PersonaMatrix

SOURCE_LLM = "llm"
SOURCE_PROPAGATED = "propagated"
SOURCE_UNREACHED = "unreached"


class TripartiteExportError(ValueError):
    pass


def write_affinity_tsv(stream: IO[str], values: np.ndarray, user_ids: IdMap, catalog: PersonaCatalog) -> None:
    stream.write("\t".join(["user_id", *catalog.names]) + "\n")
    for u, row in enumerate(np.asarray(values)):
        stream.write("\t".join([user_ids[u], *(f"{x:.6f}" for x in row)]) + "\n")


def read_affinity_tsv(stream: IO[str]) -> tuple[list[str], list[str], np.ndarray]:
    header = stream.readline().rstrip("\n").split("\t")
    keys, rows = [], []
    for line in stream:
        if line.strip():
            cells = line.rstrip("\n").split("\t")
            keys.append(cells[0])
            rows.append([float(x) for x in cells[1:]])
    return keys, header[1:], np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)


def write_personas_jsonl(
    stream: IO[str],
    pa: PersonaMatrix,
    sources: Sequence[str],
    user_ids: IdMap,
    catalog: PersonaCatalog,
) -> None:
    names = catalog.names
    for u in range(pa.shape[0]):
        row = {"user": user_ids[u], "personas": [names[m] for m in pa.personas_of(u)], "source": sources[u]}
        stream.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_scores_tsv(stream: IO[str], scores: Mapping[int, float], user_ids: IdMap) -> None:
    stream.write("user_id\tdu_score\n")
    for u in sorted(scores):
        stream.write(f"{user_ids[u]}\t{scores[u]:.6f}\n")


def write_json(path: str | Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def export_tripartite(
    stream: IO[str],
    purchases: PurchaseGraph,
    pa: PersonaMatrix,
    catalog: PersonaCatalog,
    item_personas: Iterable[tuple[str, str]] = (),
) -> int:
    """Write typed edge rows ``U``/``P``/``Q`` for a user-item-persona graph; returns row count.

    ``item_personas`` holds ``(item_id, persona_name)`` pairs.
    """
    graph, users, items = purchases
    q_rows = []
    for item_key, name in item_personas:
        if str(item_key) not in items:
            raise TripartiteExportError(f"unknown item {item_key!r}")
        m = catalog.index(name)
        if m is None:
            raise TripartiteExportError(f"unknown persona {name!r} for item {item_key!r}")
        q_rows.append((items.index(item_key), m))

    n = 0
    for u, v in graph.edges():
        stream.write(f"U\t{users[u]}\t{items[v]}\n")
        n += 1
    for u in range(pa.shape[0]):
        for m in pa.personas_of(u):
            stream.write(f"P\t{users[u]}\t{catalog.names[m]}\n")
            n += 1
    for v, m in sorted(set(q_rows)):
        stream.write(f"Q\t{items[v]}\t{catalog.names[m]}\n")
        n += 1
    return n
