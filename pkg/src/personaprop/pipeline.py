"""End-to-end loop: sample, label, recompute affinity; then top-k assignment."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from .artifacts import (
    SOURCE_LLM,
    SOURCE_PROPAGATED,
    SOURCE_UNREACHED,
    write_affinity_tsv,
    write_json,
    write_personas_jsonl,
)
from .exact import AffinityMatrix, exact_affinity
from .graph import PurchaseGraph
from .labelers import (
    LabelCache,
    Labeler,
    LabelerUnavailable,
    RemoteLabeler,
    SyntheticLabeler,
    label_users,
)
from .personas import (
    DistributionUndefinedError,
    PersonaCatalog,
    PersonaMatrix,
    build_label_matrix,
    persona_distribution,
)
from .revaff import aggregate_report, revaff_all
from .sampling import select_batch

log = logging.getLogger(__name__)

SOLVERS = ("exact", "revaff")


class ConfigError(ValueError):
    pass


class PipelineInterrupted(RuntimeError):
    """The labeler failed hard; completed iterations are checkpointed and the run can resume."""

    def __init__(self, message: str, completed: int):
        super().__init__(message)
        self.completed = completed


@dataclass
class LabelerConfig:
    kind: str = "remote"
    url: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4"
    temperature: float | None = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    api_key_env: str = "PERSONAPROP_API_KEY"
    max_in_flight: int = 1
    k_max: int = 5
    planted: str | None = None

    def build(self, catalog: PersonaCatalog | None = None) -> Labeler:
        if self.kind == "remote":
            return RemoteLabeler(
                self.url, self.model, self.temperature, self.timeout, self.max_retries, self.backoff, self.api_key_env
            )
        if self.kind == "synthetic":
            if not self.planted or catalog is None:
                raise ConfigError("synthetic labeler needs a planted label file and a catalog")
            planted = LabelCache(self.planted).entries
            return SyntheticLabeler(planted, catalog)
        raise ConfigError(f"unknown labeler kind {self.kind!r}")


@dataclass
class SolverConfig:
    kind: str = "exact"
    walk_cap: int = 1
    epsilon: float = 0.001
    beta: float = 0.5
    workers: int = 1


@dataclass
class PipelineConfig:
    budget: int | None = None
    budget_fraction: float | None = 0.1
    iterations: int = 10
    k: int = 5
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    labeler: LabelerConfig = field(default_factory=LabelerConfig)
    paths: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.solver.walk_cap < 1:
            raise ConfigError("walk_cap must be >= 1")
        if self.solver.beta < 0 or self.solver.epsilon < 0:
            raise ConfigError("beta and epsilon must be non-negative")
        if self.solver.kind not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.budget is None and self.budget_fraction is None:
            raise ConfigError("set either budget or budget_fraction")

    def resolve_budget(self, n_users: int) -> int:
        budget = self.budget if self.budget is not None else int(round(self.budget_fraction * n_users))
        if budget < self.iterations:
            raise ConfigError(f"budget {budget} is smaller than the {self.iterations} iterations")
        return budget

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        solver = SolverConfig(**data.pop("solver", {}) or {})
        labeler = LabelerConfig(**data.pop("labeler", {}) or {})
        cfg = cls(solver=solver, labeler=labeler, **data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> "PipelineConfig":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) if path else {}
        data = data or {}
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for name in parents:
                node = node.setdefault(name, {})
            node[leaf] = value
        return cls.from_dict(data)


def batch_sizes(budget: int, iterations: int) -> list[int]:
    """Split the budget over iterations; sizes differ by at most one and sum to the budget."""
    base, extra = divmod(budget, iterations)
    return [base + (1 if t < extra else 0) for t in range(iterations)]


def assign_topk(row, k: int) -> list[int]:
    """Indices of the ``k`` largest strictly positive entries, ties to the smaller index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    row = np.asarray(row, dtype=np.float64)
    positive = np.flatnonzero(row > 0)
    order = positive[np.lexsort((positive, -row[positive]))]
    return sorted(order[:k].tolist())


def compute_affinity(purchases: PurchaseGraph, pa: PersonaMatrix, solver: SolverConfig) -> AffinityMatrix:
    labels = build_label_matrix(pa, solver.beta)
    if solver.kind == "revaff":
        return revaff_all(purchases.graph, labels, solver.epsilon, solver.walk_cap, workers=solver.workers)
    return exact_affinity(purchases.graph, labels, solver.walk_cap)


def _solver_summary(affinity: AffinityMatrix) -> dict:
    if not affinity.reports:
        return {"epsilon": affinity.epsilon}
    agg = aggregate_report(affinity.reports)
    return {"epsilon": agg["epsilon"], "pushes": agg["pushes"], "max_frontier": agg["max_frontier"]}


@dataclass
class RunState:
    completed: int = 0
    spent: int = 0
    labels: dict[str, list[str]] = field(default_factory=dict)
    iterations: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> "RunState":
        return cls(**json.loads(path.read_text(encoding="utf-8")))

    def save(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(path)


@dataclass
class GPLRResult:
    pa: PersonaMatrix
    affinity: AffinityMatrix
    sources: list[str]
    report: dict

    def write(self, out_dir: str | Path, purchases: PurchaseGraph, catalog: PersonaCatalog) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "personas.jsonl").open("w", encoding="utf-8") as fh:
            write_personas_jsonl(fh, self.pa, self.sources, purchases.users, catalog)
        with (out / "affinity.tsv").open("w", encoding="utf-8") as fh:
            write_affinity_tsv(fh, self.affinity.values, purchases.users, catalog)
        write_json(out / "report.json", self.report)
        if self.affinity.reports:
            write_json(out / "solver_report.json", aggregate_report(self.affinity.reports))


def _restore(state: RunState, purchases: PurchaseGraph, catalog: PersonaCatalog) -> PersonaMatrix:
    pa = PersonaMatrix(purchases.graph.user_count, len(catalog))
    for key, names in state.labels.items():
        idx = [catalog.index(n) for n in names]
        pa.set_labels(purchases.users.index(key), [i for i in idx if i is not None])
    return pa


def finalize(pa: PersonaMatrix, affinity: AffinityMatrix, k: int) -> tuple[PersonaMatrix, list[str]]:
    """Top-k personas for every user the labeler did not answer for."""
    final = pa.copy()
    labeled = pa.labeled()
    sources = []
    for u in range(pa.shape[0]):
        if u in labeled:
            sources.append(SOURCE_LLM)
            continue
        chosen = assign_topk(affinity.values[u], k)
        final.values[u, chosen] = 1
        sources.append(SOURCE_PROPAGATED if chosen else SOURCE_UNREACHED)
    return final, sources


def run_gplr(
    purchases: PurchaseGraph,
    catalog: PersonaCatalog,
    labeler: Labeler,
    config: PipelineConfig,
    item_names: Callable[[int], str] | None = None,
    checkpoint_dir: str | Path | None = None,
    sampler: Callable[..., list[int]] = select_batch,
) -> GPLRResult:
    """Run the iterative labeling loop and assign personas to every remaining user.

    With ``checkpoint_dir`` the run state is saved after each iteration and an
    existing state there is resumed from.
    """
    config.validate()
    graph, users, items = purchases
    item_names = item_names or (lambda v: items[v])
    budget = config.resolve_budget(graph.user_count)
    sizes = batch_sizes(budget, config.iterations)

    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    state = RunState()
    cache = LabelCache()
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
        if (ckpt / "state.json").exists():
            state = RunState.load(ckpt / "state.json")
            log.info("resuming after iteration %d", state.completed)
        cache = LabelCache(ckpt / "labels.jsonl")

    pa = _restore(state, purchases, catalog)
    isolated = set(graph.isolated_users())
    affinity = AffinityMatrix(np.zeros((graph.user_count, len(catalog))), config.solver.epsilon, config.solver.walk_cap)
    if state.completed:
        affinity = compute_affinity(purchases, pa, config.solver)

    for t in range(state.completed + 1, config.iterations + 1):
        pool = set(range(graph.user_count)) - pa.labeled() - isolated
        try:
            q = persona_distribution(pa)
        except DistributionUndefinedError:
            q = None
        batch = sampler(t, sizes[t - 1], pool, seed=[config.seed, t], q=q, affinity=affinity.values)
        try:
            outcome = label_users(
                labeler, batch, graph, catalog, users, item_names, pa=pa,
                k_max=config.labeler.k_max, max_workers=config.labeler.max_in_flight, cache=cache,
            )
        except LabelerUnavailable as exc:
            if ckpt:
                state.save(ckpt / "state.json")
            raise PipelineInterrupted(f"iteration {t}: {exc}", state.completed) from exc

        if outcome.cached:
            log.info("iteration %d: %d answers replayed from the label cache", t, outcome.cached)
        for u in outcome.assigned:
            state.labels[users[u]] = [catalog.names[m] for m in pa.personas_of(u)]
        state.spent += len(batch)
        affinity = compute_affinity(purchases, pa, config.solver)
        state.iterations.append({
            "iteration": t,
            "selected": len(batch),
            # fresh and cached answers alike, so a resumed run reports the same numbers
            "labeler_calls": outcome.calls + outcome.cached,
            "labeled": len(outcome.assigned) - len(outcome.unrepresentable),
            "unrepresentable": len(outcome.unrepresentable),
            "failed": len(outcome.failed),
            "warnings": len(outcome.warnings),
            "solver": _solver_summary(affinity),
        })
        state.completed = t
        if ckpt:
            state.save(ckpt / "state.json")

    final, sources = finalize(pa, affinity, config.k)
    report = {
        "users": graph.user_count,
        "items": graph.item_count,
        "edges": graph.edge_count,
        "personas": len(catalog),
        "budget": budget,
        "spent": state.spent,
        "prototypes": len(pa.prototypes),
        "unrepresentable": len(pa.unrepresentable),
        "propagated": sources.count(SOURCE_PROPAGATED),
        "unreached": sources.count(SOURCE_UNREACHED),
        "isolated_users": len(isolated),
        "solver": config.solver.kind,
        "walk_cap": config.solver.walk_cap,
        "beta": config.solver.beta,
        "epsilon": affinity.epsilon,
        "iterations": state.iterations,
    }
    return GPLRResult(final, affinity, sources, report)
