"""Command line entry point: ``personaprop <subcommand>``."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .artifacts import export_tripartite, write_affinity_tsv, write_json, write_personas_jsonl, write_scores_tsv
from .graph import IdMap, PurchaseGraph, build_graph, load_edges, write_edges
from .labelers import LabelCache
from .personas import DistributionUndefinedError, PersonaCatalog, PersonaMatrix, persona_distribution
from .pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineInterrupted,
    compute_affinity,
    finalize,
    run_gplr,
)
from .revaff import aggregate_report
from .sampling import select_batch


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"


def load_purchases(edges: str | Path, fmt: str | None = None) -> PurchaseGraph:
    """Read an edge file; ``users.tsv``/``items.tsv`` beside it fix the index order."""
    path = Path(edges)
    with path.open("rb") as fh:
        records = load_edges(fh, _format_of(path, fmt))
    users = items = ()
    if (path.parent / "users.tsv").exists() and (path.parent / "items.tsv").exists():
        with (path.parent / "users.tsv").open(encoding="utf-8") as fh:
            users = IdMap.read(fh).keys
        with (path.parent / "items.tsv").open(encoding="utf-8") as fh:
            items = IdMap.read(fh).keys
    return build_graph(records, users, items)


def load_item_names(path: str | None, purchases: PurchaseGraph):
    if not path:
        return lambda v: purchases.items[v]
    names = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                key, name = line.rstrip("\n").split("\t", 1)
                names[key] = name
    return lambda v: names.get(purchases.items[v], purchases.items[v])


def _labels_to_pa(cache: LabelCache, purchases: PurchaseGraph, catalog: PersonaCatalog) -> PersonaMatrix:
    pa = PersonaMatrix(purchases.graph.user_count, len(catalog))
    for key, names in cache.entries.items():
        u = purchases.users.get(key)
        if u is None:
            click.echo(f"warning: label cache user {key!r} not in graph", err=True)
            continue
        pa.set_labels(u, [i for i in (catalog.index(n) for n in names) if i is not None])
    return pa


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Assign personas to every user of a purchase graph from a small labeled subset."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("edges", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "tsv"]), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def ingest(edges, fmt, out_dir):
    """Validate an edge file and write merged edges plus id-map sidecars."""
    purchases = load_purchases(edges, fmt)
    purchases.graph.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "edges.csv").open("w", encoding="utf-8") as fh:
        write_edges(purchases.records(), fh)
    with (out / "users.tsv").open("w", encoding="utf-8") as fh:
        purchases.users.write(fh)
    with (out / "items.tsv").open("w", encoding="utf-8") as fh:
        purchases.items.write(fh)
    g = purchases.graph
    click.echo(
        f"users={g.user_count} items={g.item_count} edges={g.edge_count} "
        f"isolated_users={len(g.isolated_users())} isolated_items={len(g.isolated_items())}"
    )


def _solver_options(f):
    f = click.option("--solver", type=click.Choice(["exact", "revaff"]), default=None)(f)
    f = click.option("--walk-cap", type=int, default=None)(f)
    f = click.option("--epsilon", type=float, default=None)(f)
    f = click.option("--beta", type=float, default=None)(f)
    return f


def _solver_overrides(solver, walk_cap, epsilon, beta) -> dict:
    return {"solver.kind": solver, "solver.walk_cap": walk_cap, "solver.epsilon": epsilon, "solver.beta": beta}


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--edges", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--item-names", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--checkpoint", type=click.Path(file_okay=False), default=None)
@click.option("--budget", type=int, default=None)
@click.option("--tau", type=float, default=None, help="Budget as a fraction of users.")
@click.option("--iterations", type=int, default=None)
@click.option("-k", "k", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--labeler", "labeler_kind", type=click.Choice(["remote", "synthetic"]), default=None)
@click.option("--planted", type=click.Path(exists=True, dir_okay=False), default=None)
@_solver_options
def run(config_path, edges, catalog, item_names, out_dir, checkpoint, budget, tau, iterations, k, seed,
        labeler_kind, planted, solver, walk_cap, epsilon, beta):
    """Run the full sample/label/propagate loop."""
    overrides = {
        "iterations": iterations, "k": k, "seed": seed,
        "labeler.kind": labeler_kind, "labeler.planted": planted,
        "paths.edges": edges, "paths.catalog": catalog, "paths.item_names": item_names,
        "paths.out": out_dir, "paths.checkpoint": checkpoint,
        **_solver_overrides(solver, walk_cap, epsilon, beta),
    }
    try:
        config = PipelineConfig.load(config_path, overrides)
        if budget is not None:
            config.budget, config.budget_fraction = budget, None
        elif tau is not None:
            config.budget, config.budget_fraction = None, tau
        config.validate()
        paths = config.paths
        for key in ("edges", "catalog", "out"):
            if not paths.get(key):
                raise ConfigError(f"missing path: {key}")
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc

    purchases = load_purchases(paths["edges"])
    cat = PersonaCatalog.load(paths["catalog"])
    labeler = config.labeler.build(cat)
    try:
        result = run_gplr(
            purchases, cat, labeler, config,
            item_names=load_item_names(paths.get("item_names"), purchases),
            checkpoint_dir=paths.get("checkpoint"),
        )
    except PipelineInterrupted as exc:
        click.echo(f"interrupted: {exc}; rerun with the same checkpoint to resume", err=True)
        sys.exit(3)
    result.write(paths["out"], purchases, cat)
    rep = result.report
    click.echo(
        f"prototypes={rep['prototypes']} propagated={rep['propagated']} "
        f"unreached={rep['unreached']} spent={rep['spent']}/{rep['budget']}"
    )


@main.command()
@click.option("--edges", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), required=True, help="Label cache JSON-lines.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("-k", "k", type=int, default=5)
@_solver_options
def propagate(edges, catalog, labels, out_dir, k, solver, walk_cap, epsilon, beta):
    """Compute affinities and top-k assignments from existing labels only."""
    config = PipelineConfig.load(None, _solver_overrides(solver, walk_cap, epsilon, beta))
    purchases = load_purchases(edges)
    cat = PersonaCatalog.load(catalog)
    pa = _labels_to_pa(LabelCache(labels), purchases, cat)
    affinity = compute_affinity(purchases, pa, config.solver)
    final, sources = finalize(pa, affinity, k)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "personas.jsonl").open("w", encoding="utf-8") as fh:
        write_personas_jsonl(fh, final, sources, purchases.users, cat)
    with (out / "affinity.tsv").open("w", encoding="utf-8") as fh:
        write_affinity_tsv(fh, affinity.values, purchases.users, cat)
    if affinity.reports:
        write_json(out / "solver_report.json", aggregate_report(affinity.reports))
    click.echo(f"propagated={sources.count('propagated')} unreached={sources.count('unreached')}")


@main.command()
@click.option("--edges", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--labels", type=click.Path(dir_okay=False), default=None, help="Label cache JSON-lines.")
@click.option("--iteration", type=int, default=2)
@click.option("--batch-size", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--scores", "scores_out", type=click.Path(dir_okay=False), default=None)
@_solver_options
def sample(edges, catalog, labels, iteration, batch_size, seed, scores_out, solver, walk_cap, epsilon, beta):
    """Dry-run the user selection for one iteration and print the chosen ids."""
    config = PipelineConfig.load(None, _solver_overrides(solver, walk_cap, epsilon, beta))
    purchases = load_purchases(edges)
    cat = PersonaCatalog.load(catalog)
    pa = _labels_to_pa(LabelCache(labels) if labels else LabelCache(), purchases, cat)
    affinity = compute_affinity(purchases, pa, config.solver)
    try:
        q = persona_distribution(pa)
    except DistributionUndefinedError:
        q = None
    pool = set(range(purchases.graph.user_count)) - pa.labeled() - set(purchases.graph.isolated_users())
    picked, scores = select_batch(iteration, batch_size, pool, seed=[seed, iteration], q=q,
                                  affinity=affinity.values, return_scores=True)
    for u in picked:
        click.echo(purchases.users[u])
    if scores_out:
        with open(scores_out, "w", encoding="utf-8") as fh:
            write_scores_tsv(fh, scores, purchases.users)


@main.command("export-tripartite")
@click.option("--edges", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--personas", type=click.Path(exists=True, dir_okay=False), required=True,
              help="personas.jsonl written by run or propagate.")
@click.option("--item-labels", type=click.Path(exists=True, dir_okay=False), default=None,
              help='JSON-lines {"item": id, "personas": [names]}.')
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def export_tripartite_cmd(edges, catalog, personas, item_labels, out_path):
    """Write the user-item-persona edge list for downstream recommenders."""
    purchases = load_purchases(edges)
    cat = PersonaCatalog.load(catalog)
    pa = PersonaMatrix(purchases.graph.user_count, len(cat))
    with open(personas, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                idx = [cat.index(n) for n in row["personas"]]
                if None in idx:
                    raise click.ClickException(f"unknown persona in {personas}: {row['personas']}")
                pa.values[purchases.users.index(row["user"]), idx] = 1
    pairs = []
    if item_labels:
        with open(item_labels, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    pairs.extend((row["item"], name) for name in row["personas"])
    with open(out_path, "w", encoding="utf-8") as fh:
        n = export_tripartite(fh, purchases, pa, cat, pairs)
    click.echo(f"rows={n}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Summarize a finished run directory."""
    data = json.loads((Path(run_dir) / "report.json").read_text(encoding="utf-8"))
    click.echo(f"users={data['users']} items={data['items']} edges={data['edges']} personas={data['personas']}")
    click.echo(f"budget={data['budget']} spent={data['spent']} prototypes={data['prototypes']} "
               f"unrepresentable={data['unrepresentable']}")
    click.echo(f"propagated={data['propagated']} unreached={data['unreached']} solver={data['solver']} "
               f"walk_cap={data['walk_cap']} epsilon={data['epsilon']}")
    for it in data["iterations"]:
        extra = f" pushes={it['solver']['pushes']}" if "pushes" in it["solver"] else ""
        click.echo(f"  iter {it['iteration']:>3}: selected={it['selected']} labeled={it['labeled']} "
                   f"unrepresentable={it['unrepresentable']} failed={it['failed']}{extra}")
    solver_path = Path(run_dir) / "solver_report.json"
    if solver_path.exists():
        solver = json.loads(solver_path.read_text(encoding="utf-8"))
        click.echo(f"solver: pushes={solver['pushes']} wall_time_ms={solver['wall_time_ms']} "
                   f"max_frontier={solver['max_frontier']}")


if __name__ == "__main__":
    main()
