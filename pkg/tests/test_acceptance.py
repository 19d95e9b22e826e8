"""Acceptance suite: one PASS/FAIL line per criterion, printed and summarized at the end.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (or ``python tests/test_acceptance.py``).
"""
from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from personaprop.exact import attention, exact_affinity, mc_attention
from personaprop.labelers import LabelCache, SyntheticLabeler
from personaprop.personas import PersonaCatalog, PersonaMatrix, build_label_matrix
from personaprop.pipeline import PipelineConfig, run_gplr
from personaprop.prompts import format_label_response, parse_label_response
from personaprop.revaff import revaff_all
from personaprop.sampling import select_batch
from personaprop.synthetic import planted_communities, random_bipartite, random_label_matrix

pytestmark = pytest.mark.acceptance

N_GRAPHS = 50
WALK_CAPS = (1, 2, 3)
GUARANTEE_EPS = (0.2, 0.1, 0.01, 0.001)
SWEEP_EPS = (0.0, 0.001, 0.01, 0.02, 0.05, 0.1, 0.2)
# Reference eps of 0.02 rescaled to this corpus: per-entry affinity scales like
# tau / n_personas, which is 0.1 / 51 on the reference data and 0.1 / 5 here.
REFERENCE_EPS = 0.02
EQUIVALENT_EPS = 0.2  # 0.02 * 51 / 5 = 0.204, rounded down to the sweep grid (more pushes, stricter)
PUSH_RATIO_TARGET = 0.25


@pytest.fixture(scope="module")
def corpus():
    """Exact and approximate affinities for every (graph, walk_cap, eps) of the sweep."""
    rows = []
    start = time.perf_counter()
    guarantee_time = 0.0
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(seed)
        g = random_bipartite(100, 50, 500, rng)  # mean user degree 5
        labels = random_label_matrix(100, 5, 0.1, rng)
        for walk_cap in WALK_CAPS:
            exact = exact_affinity(g, labels, walk_cap).values
            for eps in SWEEP_EPS:
                t0 = time.perf_counter()
                approx = revaff_all(g, labels, eps, walk_cap)
                if eps in GUARANTEE_EPS:
                    guarantee_time += time.perf_counter() - t0
                diff = np.abs(exact - approx.values)
                rows.append({
                    "seed": seed, "walk_cap": walk_cap, "eps": eps,
                    "max_dev": float(diff.max()),
                    "aae": float(diff.mean()),
                    "pushes": sum(r.pushes for r in approx.reports),
                })
    return {"rows": rows, "elapsed": time.perf_counter() - start, "guarantee_time": guarantee_time}


def _select(rows, **kw):
    return [r for r in rows if all(r[k] == v for k, v in kw.items())]


def test_c1_eps_guarantee(corpus, verdict):
    worst = {eps: max(r["max_dev"] / eps for r in _select(corpus["rows"], eps=eps)) for eps in GUARANTEE_EPS}
    within = all(w <= 1.0 for w in worst.values())
    fast = corpus["guarantee_time"] < 60.0
    detail = ", ".join(f"eps={e}: max|A-Ahat|/eps={w:.3f}" for e, w in worst.items())
    ok = verdict("C1 eps-guarantee", within and fast,
                 f"{N_GRAPHS} graphs x walk_cap {WALK_CAPS}; {detail}; solver time {corpus['guarantee_time']:.1f}s (<60s)")
    assert ok


def test_c2_exact_at_zero(corpus, verdict):
    worst = max(r["max_dev"] for r in _select(corpus["rows"], eps=0.0))
    assert verdict("C2 exactness at eps=0", worst <= 1e-9, f"max deviation {worst:.2e} (<=1e-9)")


def test_c3_empirical_slack(corpus, verdict):
    ok = True
    parts = []
    for eps in GUARANTEE_EPS + (REFERENCE_EPS, 0.05):
        ratios = np.array([r["aae"] / eps for r in _select(corpus["rows"], eps=eps)])
        ok &= bool(ratios.max() <= 1.0)
        q = np.quantile(ratios, [0.0, 0.5, 0.9, 1.0])
        parts.append(f"eps={eps}: AAE/eps min={q[0]:.4f} median={q[1]:.4f} p90={q[2]:.4f} max={q[3]:.4f}")
    for p in parts:
        print("   ", p)
    assert verdict("C3 empirical slack", ok, "AAE <= eps on every instance; ratios: " + " | ".join(parts))


def test_c4_efficiency_trend(corpus, verdict):
    rows = corpus["rows"]
    monotone = True
    ratio_equiv, ratio_ref = {}, {}
    for seed in range(N_GRAPHS):
        for walk_cap in WALK_CAPS:
            counts = [_select(rows, seed=seed, walk_cap=walk_cap, eps=e)[0]["pushes"] for e in SWEEP_EPS]
            monotone &= all(a >= b for a, b in zip(counts, counts[1:]))
            base = counts[0]
            ratio_equiv[seed, walk_cap] = counts[SWEEP_EPS.index(EQUIVALENT_EPS)] / base
            ratio_ref[seed, walk_cap] = counts[SWEEP_EPS.index(REFERENCE_EPS)] / base
    pooled = float(np.median(list(ratio_equiv.values())))
    per_cap = {s: float(np.median([v for (_, c), v in ratio_equiv.items() if c == s])) for s in WALK_CAPS}
    literal = {s: float(np.median([v for (_, c), v in ratio_ref.items() if c == s])) for s in WALK_CAPS}
    print("    push ratio at eps=%.2f by walk_cap: %s" % (EQUIVALENT_EPS, {k: round(v, 3) for k, v in per_cap.items()}))
    print("    push ratio at literal eps=%.2f by walk_cap (informational): %s"
          % (REFERENCE_EPS, {k: round(v, 3) for k, v in literal.items()}))
    ok = monotone and pooled <= PUSH_RATIO_TARGET
    assert verdict(
        "C4 efficiency trend", ok,
        f"pushes non-increasing in eps on all {len(ratio_equiv)} instances: {monotone}; "
        f"median pushes(eps={EQUIVALENT_EPS})/pushes(0) = {pooled:.3f} (<= {PUSH_RATIO_TARGET}); "
        f"per walk_cap {', '.join(f'{k}:{v:.3f}' for k, v in per_cap.items())}",
    )


def test_c5_monte_carlo_oracle(verdict):
    n_walks = 100_000
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        g = random_bipartite(100, 50, 500, rng)
        walk_cap = WALK_CAPS[seed % 3]
        pi = attention(g, walk_cap).values
        starts = rng.choice(np.flatnonzero(g.user_degrees > 0), size=5, replace=False)
        for u in starts:
            row = mc_attention(g, int(u), walk_cap, n_walks, seed=[seed, int(u)])
            worst = max(worst, float(np.abs(row - pi[u]).max()))
    assert verdict("C5 Monte-Carlo oracle", worst <= 0.01,
                   f"10 instances x 5 rows, {n_walks} walks: L-inf {worst:.4f} (<=0.01)")


def _uniform_sampler(iteration, batch_size, pool, seed=None, **kw):
    return select_batch(1, batch_size, pool, seed=seed)


def test_c6_du_bias_mitigation(verdict):
    fractions = {"du": [], "uniform": []}
    for s in range(20):
        inst = planted_communities([180, 20], [40, 40], degree=5, homophily=0.85, rng=np.random.default_rng(1000 + s))
        for name, sampler in (("du", select_batch), ("uniform", _uniform_sampler)):
            cfg = PipelineConfig(budget=30, iterations=5, k=1, seed=s)
            res = run_gplr(inst.purchases, inst.catalog, SyntheticLabeler(inst.planted, inst.catalog), cfg,
                           sampler=sampler)
            protos = sorted(res.pa.prototypes)
            fractions[name].append(float(np.mean(inst.community[protos] == 1)))
    du, uni = np.mean(fractions["du"]), np.mean(fractions["uniform"])
    assert verdict("C6 DU bias mitigation", du > uni,
                   f"20 seeds, 90/10 skew: minority prototype fraction DU={du:.3f} vs uniform={uni:.3f}")


def test_c7_planted_recovery(verdict):
    start = time.perf_counter()
    inst = planted_communities([125] * 4, [50] * 4, degree=5, homophily=0.8, rng=np.random.default_rng(2024))
    cfg = PipelineConfig(budget_fraction=0.1, iterations=10, k=1, seed=0)
    res = run_gplr(inst.purchases, inst.catalog, SyntheticLabeler(inst.planted, inst.catalog), cfg)
    prop = [u for u, s in enumerate(res.sources) if s == "propagated"]
    acc = float(np.mean([res.pa.personas_of(u) == [inst.community[u]] for u in prop]))
    elapsed = time.perf_counter() - start
    baseline = 1 / 4
    ok = acc >= 1.5 * baseline and elapsed < 30.0
    assert verdict("C7 planted recovery", ok,
                   f"{len(prop)} propagated users: accuracy {acc:.3f} (>= {1.5 * baseline:.3f}); "
                   f"unreached {res.report['unreached']}; {elapsed:.2f}s (<30s)")


def test_c8_label_format_fidelity(fixtures_dir, verdict):
    catalog = PersonaCatalog.load(fixtures_dir / "catalog.json")
    results = []
    for name, expect_unrep in (("labeled_response.jsonl", False), ("unrepresentable_response.jsonl", True)):
        raw = (fixtures_dir / name).read_bytes()
        parsed = parse_label_response(raw.decode("utf-8"), catalog)
        again = (format_label_response(parsed.labels, catalog) + "\n").encode("utf-8")
        results.append(again == raw and bool(parsed.unrepresentable) == expect_unrep and not parsed.warnings)
    labeled = parse_label_response((fixtures_dir / "labeled_response.jsonl").read_text(), catalog)
    results.append(len(next(iter(labeled.labels.values()))) == 2)
    assert verdict("C8 label-format fidelity", all(results), "both fixtures parse and re-serialize byte-for-byte")


DATA_ENV = "PERSONAPROP_DATASET_DIR"


def reproduce_dataset(root: Path, epsilons=(0.02, 0.05, 0.1), workers: int = 1) -> tuple[bool, list[str]]:
    """Exact vs approximate affinities on an on-disk dataset; wall-clock is reported only."""
    from personaprop.cli import load_purchases

    purchases = load_purchases(root / "edges.csv")
    catalog = PersonaCatalog.load(root / "catalog.json")
    pa = PersonaMatrix(purchases.graph.user_count, len(catalog))
    for key, names in LabelCache(root / "labels.jsonl").entries.items():
        if key in purchases.users:
            pa.set_labels(purchases.users.index(key), [i for i in map(catalog.index, names) if i is not None])
    labels = build_label_matrix(pa, beta=0.0)  # de-bias off, as in the reference timing table
    t0 = time.perf_counter()
    exact = exact_affinity(purchases.graph, labels, 1).values
    lines = [f"{purchases.graph.user_count} users, exact {time.perf_counter() - t0:.1f}s"]
    ok = True
    for eps in epsilons:
        t0 = time.perf_counter()
        approx = revaff_all(purchases.graph, labels, eps, 1, workers=workers)
        aae = float(np.abs(exact - approx.values).mean())
        ok &= aae <= eps
        lines.append(f"eps={eps}: AAE={aae:.2e} {time.perf_counter() - t0:.1f}s")
    return ok, lines


def test_dataset_harness_on_synthetic_data(tmp_path):
    from personaprop.graph import write_edges

    inst = planted_communities([60, 60], [30, 30], degree=4, homophily=0.8, rng=np.random.default_rng(9))
    with (tmp_path / "edges.csv").open("w") as fh:
        write_edges(inst.purchases.records(), fh)
    (tmp_path / "catalog.json").write_text(inst.catalog.to_json())
    cache = LabelCache(tmp_path / "labels.jsonl")
    for key in list(inst.planted)[::10]:
        cache.put(key, inst.planted[key])
    ok, lines = reproduce_dataset(tmp_path)
    assert ok and len(lines) == 4


def test_c9_dataset_reproduction(verdict):
    root = os.environ.get(DATA_ENV)
    if not root:
        ACCEPTANCE_LINES.append(f"[SKIP] C9 dataset reproduction: {DATA_ENV} not set, dataset absent")
        pytest.skip(f"set {DATA_ENV} to a directory with edges.csv, catalog.json, labels.jsonl")
    ok, lines = reproduce_dataset(Path(root), workers=os.cpu_count() or 1)
    assert verdict("C9 dataset reproduction", ok, "; ".join(lines))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
