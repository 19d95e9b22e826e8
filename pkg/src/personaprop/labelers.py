"""Pluggable labelers (remote chat endpoint, planted synthetic oracle) and batch labeling."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .graph import BipartiteGraph, IdMap
from .personas import PersonaCatalog, PersonaMatrix
from .prompts import (
    LabelParseError,
    Prompt,
    format_label_response,
    parse_label_response,
    render_item_prompt,
    render_label_prompt,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "PERSONAPROP_API_KEY"


class LabelTransportError(RuntimeError):
    """Request failed after exhausting retries; the subject stays unlabeled."""


class LabelerUnavailable(RuntimeError):
    """Non-retryable labeler failure (bad credentials, bad endpoint). Aborts a run."""


@dataclass(frozen=True)
class LabelRequest:
    key: str
    prompt: Prompt
    kind: str = "user"


class Labeler(Protocol):
    def complete(self, request: LabelRequest) -> str: ...


class SyntheticLabeler:
    """Deterministic oracle answering from planted persona names.

    Keys missing from ``planted`` are answered as unrepresentable; keys in
    ``malformed`` get an unparseable reply.
    """

    def __init__(
        self,
        planted: Mapping[str, Sequence[str]],
        catalog: PersonaCatalog,
        planted_items: Mapping[str, Sequence[str]] | None = None,
        malformed: Iterable[str] = (),
    ):
        self.catalog = catalog
        self.planted = {str(k): list(v) for k, v in planted.items()}
        self.planted_items = {str(k): list(v) for k, v in (planted_items or {}).items()}
        self.malformed = {str(k) for k in malformed}
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: LabelRequest) -> str:
        with self._lock:
            self.calls += 1
        if request.key in self.malformed:
            return "I could not decide, sorry."
        table = self.planted if request.kind == "user" else self.planted_items
        names = table.get(request.key, [])
        if not names:
            return format_label_response({request.key: []}, self.catalog)
        return json.dumps({request.key: names}, ensure_ascii=False)


class RemoteLabeler:
    """Client for an OpenAI-style chat-completions endpoint.

    Sends ``{"model", "messages", "temperature"}`` and reads
    ``choices[0].message.content``. The API key is read from ``api_key_env``.
    """

    def __init__(
        self,
        url: str,
        model: str,
        temperature: float | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        api_key_env: str = API_KEY_ENV,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.model = model
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff = backoff
        self.api_key_env = api_key_env
        self.client = client or httpx.Client(timeout=timeout)
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: LabelRequest) -> str:
        body = {"model": self.model, "messages": request.prompt.messages()}
        if self.temperature is not None:
            body["temperature"] = self.temperature
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise LabelerUnavailable(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                # unexpected body shape is a per-request failure, not worth retrying
                return resp.text
        raise LabelTransportError(f"{request.key}: gave up after {self.max_retries + 1} attempts ({last_error})")


@dataclass
class LabelOutcome:
    assigned: dict[int, list[int]] = field(default_factory=dict)
    unrepresentable: set[int] = field(default_factory=set)
    failed: dict[int, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    calls: int = 0
    cached: int = 0


class LabelCache:
    """Append-only JSON-lines cache of labeler answers: ``{"user": key, "personas": [names]}``."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: dict[str, list[str]] = {}
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self.entries[str(row["user"])] = list(row["personas"])

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def get(self, key: str) -> list[str] | None:
        return self.entries.get(key)

    def put(self, key: str, names: list[str]) -> None:
        self.entries[key] = list(names)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"user": key, "personas": list(names)}, ensure_ascii=False) + "\n")


def _ask(labeler: Labeler, request: LabelRequest):
    """``(reply, error, fatal)`` for one request; never raises labeler errors."""
    try:
        return labeler.complete(request), None, None
    except LabelTransportError as exc:
        return None, str(exc), None
    except LabelerUnavailable as exc:
        return None, str(exc), exc


def _run_requests(labeler: Labeler, requests: list[LabelRequest], max_workers: int):
    if max_workers <= 1 or len(requests) <= 1:
        return [_ask(labeler, r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda r: _ask(labeler, r), requests))


def _interpret(key: str, text: str, catalog: PersonaCatalog, outcome: LabelOutcome) -> list[int] | None:
    """Personas for ``key`` from a reply, or None when the reply is unusable."""
    try:
        parsed = parse_label_response(text, catalog)
    except LabelParseError as exc:
        outcome.warnings.append(f"{key}: {exc}")
        return None
    outcome.warnings.extend(parsed.warnings)
    for other in sorted(parsed.labels.keys() - {key}):
        outcome.warnings.append(f"{key}: reply also labeled unrequested id {other!r}, ignored")
    if key in parsed.malformed or key not in parsed.labels:
        outcome.warnings.append(f"{key}: reply has no usable entry for the requested id")
        return None
    return sorted(parsed.labels[key])


def label_users(
    labeler: Labeler,
    users: Iterable[int],
    graph: BipartiteGraph,
    catalog: PersonaCatalog,
    user_ids: IdMap,
    item_names: Callable[[int], str],
    pa: PersonaMatrix | None = None,
    k_max: int = 5,
    max_workers: int = 1,
    cache: LabelCache | None = None,
) -> LabelOutcome:
    """Prompt the labeler once per user and record answers into ``pa``.

    Unusable replies and transport failures leave the user unlabeled and listed
    in ``failed``; the caller decides whether it returns to the sampling pool.
    """
    outcome = LabelOutcome()
    users = list(users)
    pending: list[tuple[int, LabelRequest]] = []
    for u in users:
        key = user_ids[u]
        if cache is not None and key in cache:
            idx = [catalog.index(n) for n in cache.get(key)]
            outcome.assigned[u] = sorted({i for i in idx if i is not None})
            outcome.cached += 1
            continue
        purchases = [(item_names(v), c) for v, c in graph.purchases(u)]
        if not purchases:
            outcome.failed[u] = "isolated user has no purchases to describe"
            continue
        pending.append((u, LabelRequest(key, render_label_prompt(key, purchases, catalog, k_max))))

    replies = _run_requests(labeler, [r for _, r in pending], max_workers)
    outcome.calls = len(pending)
    fatal = None
    for (u, req), (text, error, hard) in zip(pending, replies):
        fatal = fatal or hard
        if error is not None:
            outcome.failed[u] = error
            continue
        personas = _interpret(req.key, text, catalog, outcome)
        if personas is None:
            outcome.failed[u] = "unusable reply"
            continue
        outcome.assigned[u] = personas
        if cache is not None:
            cache.put(req.key, [catalog.names[i] for i in personas])

    for u, personas in outcome.assigned.items():
        if not personas:
            outcome.unrepresentable.add(u)
        if pa is not None:
            pa.set_labels(u, personas)
    for msg in outcome.warnings:
        log.warning(msg)
    if fatal is not None:
        # answers already received stay in the cache for the resumed run
        raise fatal
    return outcome


def label_items(
    labeler: Labeler,
    items: Iterable[int],
    catalog: PersonaCatalog,
    item_ids: IdMap,
    item_names: Callable[[int], str],
    k_max: int = 5,
    max_workers: int = 1,
) -> tuple[list[tuple[int, int]], LabelOutcome]:
    """Ask which personas each item pertains to; returns sorted (item, persona) pairs."""
    outcome = LabelOutcome()
    items = list(items)
    requests = [
        LabelRequest(item_ids[v], render_item_prompt(item_ids[v], item_names(v), catalog, k_max), kind="item")
        for v in items
    ]
    replies = _run_requests(labeler, requests, max_workers)
    outcome.calls = len(requests)
    pairs = []
    for v, req, (text, error, hard) in zip(items, requests, replies):
        if hard is not None:
            raise hard
        if error is not None:
            outcome.failed[v] = error
            continue
        personas = _interpret(req.key, text, catalog, outcome)
        if personas is None:
            outcome.failed[v] = "unusable reply"
            continue
        outcome.assigned[v] = personas
        pairs.extend((v, m) for m in personas)
    return sorted(pairs), outcome
