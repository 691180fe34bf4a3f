import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_thread, random_graph, random_thread
from convgat.errors import ArgumentError, ConfigError, FormatError, IdLookupError
from convgat.graph import (
    ConversationGraph,
    TrimConfig,
    affordance_trim,
    apply_edge_mode,
    build_graph,
    export_dot,
    k_hop_nodes,
    read_graphs,
    receptive_field_stats,
    recent_trim,
    write_graphs,
)


def _named_edges(graph, kind):
    return {(graph.nodes[s], graph.nodes[d]) for s, d, k in graph.edges if k == kind}


# ---------------------------------------------------------------- affordance


def test_affordance_fixture(fixture_thread):
    g = affordance_trim(fixture_thread, "t")
    assert set(g.nodes) == {"p", "r1", "r2", "r3", "r4", "r5", "r1a", "r6", "t"}
    assert _named_edges(g, "reply") == {
        ("p", "r1"), ("p", "r2"), ("p", "r3"), ("p", "r4"), ("p", "r5"), ("r1", "r1a"), ("p", "r6"), ("r6", "t"),
    }
    assert _named_edges(g, "post_link") == {("p", n) for n in g.nodes if n != "p"}
    assert g.nodes[0] == "p" and g.label == "abusive" and g.context_sensitive is True


def test_affordance_fixture_matches_brute_force(fixture_thread):
    g = affordance_trim(fixture_thread, "t")
    nodes = oracles.affordance_nodes(fixture_thread, "t")
    assert set(g.nodes) == nodes
    assert _named_edges(g, "reply") == oracles.reply_pairs(fixture_thread, nodes)


def test_affordance_target_only_post_edges(fixture_thread):
    g = affordance_trim(fixture_thread, "t", TrimConfig(post_edges="target_only"))
    assert _named_edges(g, "post_link") == {("p", "t")}


def test_minimal_thread():
    thread = make_thread([("p", None, 0, 0), ("t", "p", 0, 1, "abusive")])
    g = affordance_trim(thread, "t")
    assert g.nodes == ("p", "t")
    assert sorted(g.edges) == [(0, 1, "post_link"), (0, 1, "reply")]


def test_target_is_root(fixture_thread):
    # the root is the earliest comment, so nothing would survive the
    # after-target exclusion; the documented example disables it
    g = affordance_trim(fixture_thread, "p", TrimConfig(exclude_after_target=False))
    assert set(g.nodes) == {"p", "r1", "r2", "r3", "r4", "r5", "r1a"}
    assert g.target_index == 0
    assert affordance_trim(fixture_thread, "p").nodes == ("p",)


def test_later_comments_excluded():
    thread = make_thread([("p", None, 0, 0), ("a", "p", 100, 50), ("t", "p", 0, 10, "abusive")])
    assert set(affordance_trim(thread, "t").nodes) == {"p", "t"}
    assert set(affordance_trim(thread, "t", TrimConfig(exclude_after_target=False)).nodes) == {"p", "a", "t"}


def test_score_ties_prefer_older_then_smaller_id():
    rows = [("p", None, 0, 0), ("b", "p", 5, 1), ("a", "p", 5, 1), ("c", "p", 5, 0), ("t", "p", 0, 9)]
    g = affordance_trim(make_thread(rows), "t", TrimConfig(top_k=2))
    assert set(g.nodes) == {"p", "c", "a", "t"}


def test_unknown_target(fixture_thread):
    with pytest.raises(IdLookupError):
        affordance_trim(fixture_thread, "zz")
    with pytest.raises(IdLookupError):
        recent_trim(fixture_thread, "zz")


@settings(max_examples=80, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 100_000), k=st.integers(1, 6), excl=st.booleans(),
       monotone=st.booleans())
def test_affordance_matches_oracle(n, seed, k, excl, monotone):
    rng = np.random.default_rng(seed)
    thread = random_thread(rng, n, monotone=monotone)
    target = f"n{int(rng.integers(0, n))}"
    cfg = TrimConfig(top_k=k, exclude_after_target=excl)
    g = affordance_trim(thread, target, cfg)
    nodes = oracles.affordance_nodes(thread, target, k, excl)
    assert set(g.nodes) == nodes
    assert _named_edges(g, "reply") == oracles.reply_pairs(thread, nodes)
    path = thread.path_to_root(target)
    assert set(path) <= set(g.nodes)
    assert all((a, b) in _named_edges(g, "reply") for a, b in zip(path, path[1:]))
    assert len(g) <= 1 + 2 * k + len(path)
    assert g == affordance_trim(thread, target, cfg)


# ---------------------------------------------------------------- recent


def test_recent_chain30(chain30):
    g = recent_trim(chain30, "c28", TrimConfig(strategy="recent"))
    assert len(g) == 25
    assert set(g.nodes) == {"c1", "c28"} | {f"c{i}" for i in range(5, 28)}
    assert set(g.nodes) == oracles.recent_nodes(chain30, "c28", 25)
    # c5's parent c4 was dropped: no reply in-edge, the post link still reaches it
    c5 = g.index_of("c5")
    assert [(s, k) for s, d, k in g.edges if d == c5] == [(0, "post_link")]


def test_recent_small_thread_keeps_everything_earlier(fixture_thread):
    g = recent_trim(fixture_thread, "r1b", TrimConfig(strategy="recent"))
    assert set(g.nodes) == {"p", "r1", "r2", "r3", "r4", "r5", "r6", "r1a", "r1b"}


def test_recent_budget_two(chain30):
    g = recent_trim(chain30, "c28", TrimConfig(strategy="recent", recent_budget=2))
    assert set(g.nodes) == {"c1", "c28"}


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 100_000), budget=st.integers(2, 30))
def test_recent_matches_oracle(n, seed, budget):
    rng = np.random.default_rng(seed)
    thread = random_thread(rng, n, monotone=False)
    target = f"n{int(rng.integers(0, n))}"
    g = recent_trim(thread, target, TrimConfig(strategy="recent", recent_budget=budget))
    assert set(g.nodes) == oracles.recent_nodes(thread, target, budget)
    assert len(g) <= budget


def test_trim_config_validation():
    with pytest.raises(ConfigError):
        TrimConfig(top_k=0)
    with pytest.raises(ConfigError):
        TrimConfig(recent_budget=1)
    with pytest.raises(ConfigError):
        TrimConfig(edge_mode="sideways")


# ---------------------------------------------------------------- edge modes


def test_directed_is_identity(fixture_thread):
    g = affordance_trim(fixture_thread, "t")
    assert apply_edge_mode(g, "directed", fixture_thread) == g


def test_undirected_minimal():
    thread = make_thread([("p", None, 0, 0), ("t", "p", 0, 1)])
    g = affordance_trim(thread, "t", TrimConfig(post_edges="target_only"))
    g = ConversationGraph(g.thread_id, g.target_id, g.nodes, [(0, 1, "reply")])
    u = apply_edge_mode(g, "undirected", thread)
    assert sorted(u.edges) == [(0, 1, "reply"), (1, 0, "reverse")]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 100_000))
def test_undirected_doubles_unique_pair_edges(n, seed):
    # keeping only reply edges leaves one stored edge per pair, and then the
    # reverse pass doubles the edge count exactly
    rng = np.random.default_rng(seed)
    thread = random_thread(rng, n)
    g = affordance_trim(thread, f"n{n - 1}", TrimConfig(post_edges="target_only"))
    unique = ConversationGraph(g.thread_id, g.target_id, g.nodes, [e for e in g.edges if e[2] == "reply"])
    u = apply_edge_mode(unique, "undirected", thread)
    assert len(u.edges) == 2 * len(unique.edges)
    assert {(d, s) for s, d, k in u.edges if k == "reverse"} == unique.edge_pairs()


def test_undirected_stores_one_reverse_per_pair(fixture_thread):
    g = affordance_trim(fixture_thread, "t")
    u = apply_edge_mode(g, "undirected", fixture_thread)
    reverse = [(s, d) for s, d, k in u.edges if k == "reverse"]
    assert len(reverse) == len(set(reverse)) == len(g.edge_pairs())


def test_directed_temporal_fixture(fixture_thread):
    g = affordance_trim(fixture_thread, "t")
    tg = apply_edge_mode(g, "directed_temporal", fixture_thread)
    assert _named_edges(tg, "temporal") == {("r1", "r2"), ("r2", "r3"), ("r3", "r4"), ("r4", "r5"), ("r5", "r6")}
    assert set(tg.edges) - set(g.edges) == {e for e in tg.edges if e[2] == "temporal"}


def test_temporal_chain_follows_sort_key():
    rows = [("p", None, 0, 0), ("b", "p", 9, 2), ("a", "p", 8, 2), ("c", "p", 7, 1), ("t", "c", 0, 5)]
    thread = make_thread(rows)
    g = build_graph(thread, "t", TrimConfig(edge_mode="undirected_temporal"))
    assert _named_edges(g, "temporal") == {("c", "a"), ("a", "b")}
    assert ("a", "c") in _named_edges(g, "reverse")


# ---------------------------------------------------------------- receptive field


def _chain_graph():
    # p -> a -> b -> t with post links p -> {a, b, t}
    edges = [(0, 1, "reply"), (1, 2, "reply"), (2, 3, "reply"), (0, 1, "post_link"), (0, 2, "post_link"),
             (0, 3, "post_link")]
    return ConversationGraph("c", "t", ["p", "a", "b", "t"], edges)


def test_k_hop_examples():
    g = _chain_graph()
    assert k_hop_nodes(g, 0) == {3}
    assert {g.nodes[i] for i in k_hop_nodes(g, 1)} == {"t", "b", "p"}
    assert k_hop_nodes(g, 2) == {0, 1, 2, 3}
    with pytest.raises(ArgumentError):
        k_hop_nodes(g, -1)


def test_receptive_field_stats_examples():
    g = ConversationGraph("x", "t", ["p", "t"], [(0, 1, "reply")])
    assert receptive_field_stats([g], 1) == (2, 2)
    with pytest.raises(ArgumentError):
        receptive_field_stats([], 1)


def test_receptive_field_lower_median():
    graphs = [ConversationGraph("x", f"n{m}", [f"n{i}" for i in range(m + 1)],
                                [(i, i + 1, "reply") for i in range(m)]) for m in (1, 2, 3, 4)]
    # sizes at k=5: 2,3,4,5 -> lower median 3
    assert receptive_field_stats(graphs, 5) == (5, 3)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 25), seed=st.integers(0, 100_000), extra=st.integers(0, 6))
def test_k_hop_matches_matrix_oracle(n, seed, extra):
    g = random_graph(np.random.default_rng(seed), n, extra)
    previous = set()
    for k in range(0, n + 1):
        hop = k_hop_nodes(g, k)
        assert hop == oracles.khop_by_matrix(g, k)
        assert previous <= hop
        previous = hop
    # fixed point once k exceeds every in-path length
    assert k_hop_nodes(g, n) == k_hop_nodes(g, n + 5)


def test_affordance_size_bound_on_cad_like_paths():
    rng = np.random.default_rng(0)
    for _ in range(50):
        thread = random_thread(rng, 60)
        for c in thread.comments:
            if len(thread.path_to_root(c.id)) <= 14:
                assert len(affordance_trim(thread, c.id)) <= 25


# ---------------------------------------------------------------- serialization / DOT


def test_graph_jsonl_round_trip(tmp_path, fixture_thread):
    graphs = [build_graph(fixture_thread, "t", TrimConfig(edge_mode=m)) for m in
              ("directed", "undirected", "directed_temporal", "undirected_temporal")]
    path = tmp_path / "g.jsonl"
    write_graphs(graphs, path)
    assert read_graphs(path) == graphs
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"thread_id", "target_id", "label", "context_sensitive", "nodes", "edges"}


def test_graph_validation():
    with pytest.raises(FormatError):
        ConversationGraph("x", "t", ["p", "p", "t"], [])
    with pytest.raises(FormatError):
        ConversationGraph("x", "t", ["p"], [])
    with pytest.raises(FormatError):
        ConversationGraph("x", "t", ["p", "t"], [(1, 1, "reply")])
    with pytest.raises(FormatError):
        ConversationGraph("x", "t", ["p", "t"], [(0, 1, "reply"), (0, 1, "reply")])


def test_read_graphs_names_line(tmp_path):
    path = tmp_path / "g.jsonl"
    path.write_text('{"thread_id": "x", "target_id": "t", "nodes": ["t"], "edges": []}\n{oops\n')
    with pytest.raises(FormatError) as info:
        read_graphs(path)
    assert info.value.line == 2


def test_dot_without_attention():
    g = ConversationGraph("x", "t", ["p", "t"], [(0, 1, "reply"), (0, 1, "post_link")])
    dot = export_dot(g)
    assert dot.startswith("digraph")
    assert len(re.findall(r"^\s+n\d+ \[", dot, re.M)) == 2
    assert len(re.findall(r"->", dot)) >= 1
    assert "label=\"0." not in dot


def test_dot_uniform_attention():
    g = ConversationGraph("x", "t", ["a", "b", "t"], [(0, 2, "reply"), (1, 2, "post_link")])
    third = 1 / 3
    dot = export_dot(g, {(0, 2): third, (1, 2): third, (2, 2): third})
    assert re.findall(r'-> n2 \[.*label="([0-9.]+)"', dot) == ["0.3333", "0.3333"]
    assert "n2 -> n2" not in dot
    assert "orange" in dot


def test_dot_rejects_unknown_edge():
    g = ConversationGraph("x", "t", ["p", "t"], [(0, 1, "reply")])
    with pytest.raises(ArgumentError):
        export_dot(g, {(1, 0): 0.5})


def test_dot_escapes_text():
    g = ConversationGraph("x", "t", ["p", "t"], [(0, 1, "reply")])
    dot = export_dot(g, texts={"p": 'say "hi"\nthere'})
    assert '\\"hi\\"' in dot and "\\n" in dot
