"""Labeling prompt templates and a defensive parser for the JSON-lines replies."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .personas import UNREPRESENTABLE, PersonaCatalog

USER_SYSTEM = (
    "You are an e-commerce assistant. You summarize shopping behaviour and assign "
    "high-level customer personas to a shopper based on what they purchased."
)

USER_INSTRUCTION = """\
Work through the following task carefully.

Label the shopper below with personas taken from the persona list. Choose at least one persona \
and at most {k_max} personas, and only choose a persona when the purchases give clear evidence for it.

Answer in json format, one object per line, using an array of persona names rather than a \
comma separated string:
{{"user_number": ["Persona1", "Persona2"]}}

For example:
{{"20417": ["Budget Shopper", "Pet Owner"]}}

If no persona in the list describes the shopper, answer with the user labeled as {unrep}:
{{"20418": ["{unrep}"]}}

Persona list:
{persona_list}

Use exactly the user number given below as the json key.

Purchases of user {user_id}:
The user {user_id} has purchased {n_unique} unique products in total, each product name followed by \
its purchase count: he bought: {purchases}.

Only use persona names exactly as written in the list above. Reply with the json only, without explanation."""

ITEM_SYSTEM = (
    "You are an e-commerce assistant. You decide which customer personas a product is relevant to."
)

ITEM_INSTRUCTION = """\
Decide which personas from the list below would typically buy the product. Choose at most {k_max} \
personas and only those with a clear connection to the product.

Answer in json format with an array of persona names:
{{"item_number": ["Persona1", "Persona2"]}}

If no persona fits, answer {{"item_number": ["{unrep}"]}}.

Persona list:
{persona_list}

Product {item_id}: {item_name}

Reply with the json only, using exactly the product number given above as the key."""


class LabelParseError(ValueError):
    pass


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str

    def messages(self) -> list[dict[str, str]]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]


def _persona_list(catalog: PersonaCatalog, with_descriptions: bool) -> str:
    lines = []
    for p in catalog:
        if with_descriptions and p.description:
            lines.append(f"- {p.name}: {p.description}")
        else:
            lines.append(f"- {p.name}")
    return "\n".join(lines)


def serialize_purchases(purchases: Sequence[tuple[str, int]]) -> str:
    return "; ".join(f"{name}, {count} times" for name, count in purchases)


def render_label_prompt(
    user_id: str,
    purchases: Sequence[tuple[str, int]],
    catalog: PersonaCatalog,
    k_max: int = 5,
    with_descriptions: bool = False,
) -> Prompt:
    if not purchases:
        raise ValueError(f"user {user_id} has no purchases to describe")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    user = USER_INSTRUCTION.format(
        k_max=k_max,
        unrep=UNREPRESENTABLE,
        persona_list=_persona_list(catalog, with_descriptions),
        user_id=user_id,
        n_unique=len(purchases),
        purchases=serialize_purchases(purchases),
    )
    return Prompt(USER_SYSTEM, user)


def render_item_prompt(item_id: str, item_name: str, catalog: PersonaCatalog, k_max: int = 5) -> Prompt:
    user = ITEM_INSTRUCTION.format(
        k_max=k_max,
        unrep=UNREPRESENTABLE,
        persona_list=_persona_list(catalog, with_descriptions=True),
        item_id=item_id,
        item_name=item_name,
    )
    return Prompt(ITEM_SYSTEM, user)


@dataclass
class ParsedLabels:
    labels: dict[str, set[int]] = field(default_factory=dict)
    unrepresentable: set[str] = field(default_factory=set)
    malformed: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)


_FENCE = re.compile(r"```(?:json)?")


def _json_objects(text: str) -> list[dict]:
    decoder = json.JSONDecoder()
    text = _FENCE.sub("\n", text)
    out, pos = [], 0
    while True:
        start = text.find("{", pos)
        if start < 0:
            return out
        try:
            obj, end = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            out.append(obj)
        pos = end


def parse_label_response(text: str, catalog: PersonaCatalog) -> ParsedLabels:
    """Map each ``{"<key>": [names...]}`` object in ``text`` to catalog indices.

    Unknown names are dropped with a warning. A key answered only with the
    unrepresentable marker maps to an empty set and lands in ``unrepresentable``.
    Raises LabelParseError when no JSON object can be recovered at all.
    """
    objects = _json_objects(text or "")
    if not objects:
        raise LabelParseError("no json object in response")
    out = ParsedLabels()
    for obj in objects:
        for key, value in obj.items():
            key = str(key).strip()
            if isinstance(value, str):
                value = value.split(",")
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                out.malformed.add(key)
                out.warnings.append(f"{key}: persona list is not an array of strings")
                continue
            found: set[int] = set()
            unrep = False
            for name in value:
                if name.strip().casefold() == UNREPRESENTABLE.casefold():
                    unrep = True
                    continue
                idx = catalog.index(name)
                if idx is None:
                    out.warnings.append(f"{key}: unknown persona {name.strip()!r} dropped")
                else:
                    found.add(idx)
            out.labels[key] = out.labels.get(key, set()) | found
            if out.labels[key]:
                out.unrepresentable.discard(key)
            elif unrep:
                out.unrepresentable.add(key)
    return out


def format_label_response(labels: Mapping[str, Iterable[int]], catalog: PersonaCatalog) -> str:
    """Inverse of the parser: one json object per key, personas in catalog order."""
    lines = []
    for key, personas in labels.items():
        names = [catalog.names[i] for i in sorted(set(personas))] or [UNREPRESENTABLE]
        lines.append(json.dumps({str(key): names}, ensure_ascii=False))
    return "\n".join(lines)
