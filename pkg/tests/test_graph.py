import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from personaprop.graph import (
    ITEM,
    USER,
    BipartiteGraph,
    EdgeParseError,
    EdgeRecord,
    GraphBuildError,
    IdMap,
    IsolatedNodeError,
    build_graph,
    load_edges,
    walk_step_distribution,
    write_edges,
)


def _load(text, **kw):
    return load_edges(io.BytesIO(text.encode("utf-8")), **kw)


def test_duplicate_rows_merge_counts():
    assert _load("u1,v1,3\nu1,v1,2") == [EdgeRecord("u1", "v1", 5)]


def test_default_count_is_one():
    assert _load("u1,v1\nu2,v1") == [EdgeRecord("u1", "v1", 1), EdgeRecord("u2", "v1", 1)]


@pytest.mark.parametrize("text,line", [("u1,v1,-2", 1), ("u1,v1\nu2", 2), ("a,b\nc,d,x", 2), ("a,b,0", 1)])
def test_malformed_rows_name_line(text, line):
    with pytest.raises(EdgeParseError) as err:
        _load(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_header_and_tsv():
    assert _load("user_id,item_id,count\nu1,v1,2") == [EdgeRecord("u1", "v1", 2)]
    assert _load("u\tv\t4", fmt="tsv") == [EdgeRecord("u", "v", 4)]
    assert _load("x,y\nu,v", header=True) == [EdgeRecord("u", "v", 1)]
    assert load_edges(io.StringIO("é,v\n")) == [EdgeRecord("é", "v", 1)]


def test_shared_item_degrees():
    g = build_graph([EdgeRecord("u0", "v0"), EdgeRecord("u1", "v0")]).graph
    assert g.user_degrees.tolist() == [1, 1]
    assert g.item_degrees.tolist() == [2]
    assert g.edge_count == 2


def test_single_edge():
    g = build_graph([EdgeRecord("u0", "v0")]).graph
    assert g.degree(USER, 0) == g.degree(ITEM, 0) == 1


def test_path_degrees_and_first_appearance():
    edges = [EdgeRecord(u, v) for u, v in [("u0", "v0"), ("u1", "v0"), ("u1", "v1"), ("u2", "v1")]]
    pg = build_graph(edges)
    assert pg.graph.user_degrees.tolist() == [1, 2, 1]
    assert pg.graph.item_degrees.tolist() == [2, 2]
    assert pg.users.keys == ["u0", "u1", "u2"]
    assert pg.items.index("v1") == 1


def test_empty_edges_rejected():
    with pytest.raises(GraphBuildError):
        build_graph([])


def test_isolated_nodes_kept(caplog):
    pg = build_graph([EdgeRecord("a", "x")], users=["z"])
    assert pg.graph.isolated_users() == [0]
    assert "isolated" in caplog.text
    with pytest.raises(IsolatedNodeError):
        walk_step_distribution(pg.graph, 0)


def test_walk_step_examples(path_graph):
    assert walk_step_distribution(path_graph, 0, ITEM) == {0: 0.5, 1: 0.5}
    assert walk_step_distribution(path_graph, 0) == {0: 1.0}
    assert walk_step_distribution(path_graph, 1) == {0: 0.5, 1: 0.5}


def test_repeated_pairs_collapse_to_one_edge():
    g = BipartiteGraph.from_pairs(1, 1, [(0, 0), (0, 0)], counts=[2, 3])
    assert g.edge_count == 1
    assert g.purchases(0) == [(0, 5)]


@pytest.mark.parametrize("user_adj,item_adj", [(((0,),), ((),)), (((1, 0),), ((0,), (0,))), (((0,),), ((0, 0),))])
def test_validate_catches_inconsistency(user_adj, item_adj):
    g = BipartiteGraph(user_adj, item_adj, tuple(tuple(1 for _ in a) for a in user_adj))
    with pytest.raises(GraphBuildError):
        g.validate()


def test_idmap_sidecar_roundtrip():
    m = IdMap(["b", "a", "c"])
    buf = io.StringIO()
    m.write(buf)
    assert buf.getvalue() == "0\tb\n1\ta\n2\tc\n"
    assert IdMap.read(io.StringIO(buf.getvalue())) == m


edge_lists = st.lists(
    st.tuples(st.integers(0, 12), st.integers(0, 8), st.integers(1, 5)), min_size=1, max_size=60
)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_serialize_roundtrip(rows):
    records = [EdgeRecord(f"u{u}", f"i{v}", c) for u, v, c in rows]
    pg = build_graph(load_edges(io.StringIO("".join(f"{r.user_id},{r.item_id},{r.count}\n" for r in records))))
    buf = io.StringIO()
    write_edges(pg.records(), buf)
    again = build_graph(load_edges(io.BytesIO(buf.getvalue().encode())), users=pg.users.keys, items=pg.items.keys)
    assert again.graph.user_adj == pg.graph.user_adj
    assert again.graph.item_adj == pg.graph.item_adj
    assert again.graph.user_counts == pg.graph.user_counts
    assert again.users == pg.users and again.items == pg.items


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_invariants_and_stochastic_steps(rows):
    pg = build_graph([EdgeRecord(f"u{u}", f"i{v}", c) for u, v, c in rows])
    g = pg.graph
    g.validate()
    assert g.user_degrees.sum() == g.item_degrees.sum() == g.edge_count
    for side, n in ((USER, g.user_count), (ITEM, g.item_count)):
        for w in range(n):
            assert abs(sum(walk_step_distribution(g, w, side).values()) - 1.0) <= 1e-12
    assert np.allclose(g.user_to_item.sum(axis=1), 1.0)
