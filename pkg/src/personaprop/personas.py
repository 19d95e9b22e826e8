"""Persona catalog, binary persona assignments and the de-biased label matrix."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

UNREPRESENTABLE = "Unrepresentable"


class DistributionUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class Persona:
    name: str
    description: str = ""


class PersonaCatalog:
    """Ordered persona set; the order fixes column indices everywhere downstream."""

    def __init__(self, personas: Iterable[Persona | tuple[str, str] | str]):
        items = []
        for p in personas:
            if isinstance(p, str):
                p = Persona(p)
            elif not isinstance(p, Persona):
                p = Persona(*p)
            items.append(Persona(p.name.strip(), p.description.strip()))
        self.personas: tuple[Persona, ...] = tuple(items)
        self._lookup: dict[str, int] = {}
        for i, p in enumerate(self.personas):
            key = p.name.casefold()
            if not key:
                raise ValueError("persona names must be non-empty")
            if key in self._lookup:
                raise ValueError(f"duplicate persona name {p.name!r}")
            if key == UNREPRESENTABLE.casefold():
                raise ValueError(f"{UNREPRESENTABLE!r} is reserved")
            self._lookup[key] = i

    def __len__(self) -> int:
        return len(self.personas)

    def __iter__(self):
        return iter(self.personas)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.personas]

    def index(self, name: str) -> int | None:
        """Case-insensitive, whitespace-trimmed lookup; None when unknown."""
        return self._lookup.get(name.strip().casefold())

    @classmethod
    def from_json(cls, text: str) -> "PersonaCatalog":
        data = json.loads(text)
        return cls(Persona(d["name"], d.get("description", "")) for d in data)

    @classmethod
    def load(cls, path: str | Path) -> "PersonaCatalog":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps([{"name": p.name, "description": p.description} for p in self.personas], indent=2)


class PersonaMatrix:
    """Binary user x persona assignments plus bookkeeping of who got labeled how.

    ``prototypes`` are users with at least one labeler-assigned persona.
    ``unrepresentable`` are users the labeler answered for with no usable persona.
    """

    def __init__(self, n_users: int, n_personas: int):
        self.values = np.zeros((n_users, n_personas), dtype=np.int8)
        self.prototypes: set[int] = set()
        self.unrepresentable: set[int] = set()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def set_labels(self, user: int, personas: Iterable[int]) -> None:
        personas = sorted(set(personas))
        self.values[user] = 0
        if personas:
            self.values[user, personas] = 1
            self.prototypes.add(user)
            self.unrepresentable.discard(user)
        else:
            self.unrepresentable.add(user)
            self.prototypes.discard(user)

    def labeled(self) -> set[int]:
        return self.prototypes | self.unrepresentable

    def personas_of(self, user: int) -> list[int]:
        return np.flatnonzero(self.values[user]).tolist()

    def copy(self) -> "PersonaMatrix":
        out = PersonaMatrix(*self.shape)
        out.values = self.values.copy()
        out.prototypes = set(self.prototypes)
        out.unrepresentable = set(self.unrepresentable)
        return out


def _usable_prototypes(pa: PersonaMatrix) -> list[int]:
    return sorted(u for u in pa.prototypes if pa.values[u].any())


def persona_distribution(pa: PersonaMatrix) -> np.ndarray:
    """Share of each persona among all labels carried by prototype users."""
    protos = _usable_prototypes(pa)
    totals = pa.values[protos].sum(axis=0, dtype=np.float64) if protos else np.zeros(pa.shape[1])
    total = totals.sum()
    if total == 0:
        raise DistributionUndefinedError("no persona labels among prototypes")
    return totals / total


def debias_coefficients(q: np.ndarray, beta: float) -> np.ndarray:
    """``(min_n q_n / q_m) ** beta`` over observed personas; unobserved personas get 1."""
    q = np.asarray(q, dtype=np.float64)
    coef = np.ones_like(q)
    seen = q > 0
    if seen.any():
        coef[seen] = (q[seen].min() / q[seen]) ** beta
    return coef


@dataclass
class LabelMatrix:
    matrix: sp.csr_matrix
    beta: float
    coefficients: np.ndarray
    prototypes: list[int]
    excluded: list[int] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def column(self, m: int) -> dict[int, float]:
        col = self.matrix.getcol(m).tocoo()
        return {int(u): float(x) for u, x in zip(col.row, col.data) if x != 0}

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_label_matrix(pa: PersonaMatrix, beta: float) -> LabelMatrix:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    n_users, n_personas = pa.shape
    excluded = sorted(u for u in pa.prototypes if not pa.values[u].any())
    if excluded:
        log.warning("%d prototype users have no personas and are excluded", len(excluded))
    protos = _usable_prototypes(pa)
    if not protos:
        return LabelMatrix(sp.csr_matrix((n_users, n_personas)), beta, np.ones(n_personas), [], excluded)
    coef = debias_coefficients(persona_distribution(pa), beta)
    rows = pa.values[protos].astype(np.float64)
    rows = rows / rows.sum(axis=1, keepdims=True) * coef
    r, c = rows.nonzero()
    mat = sp.csr_matrix((rows[r, c], (np.asarray(protos)[r], c)), shape=(n_users, n_personas))
    return LabelMatrix(mat, beta, coef, protos, excluded)


def label_matrix_from_dense(values: Sequence[Sequence[float]] | np.ndarray, beta: float = 0.0) -> LabelMatrix:
    """Wrap an explicit label matrix (rows of non-prototypes must be zero)."""
    arr = np.asarray(values, dtype=np.float64)
    protos = np.flatnonzero(arr.any(axis=1)).tolist()
    return LabelMatrix(sp.csr_matrix(arr), beta, np.ones(arr.shape[1]), protos)
