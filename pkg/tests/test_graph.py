import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gid.events import Entity, EntityType, Event, TimeWindow
from gid.graph import CompactGraph, GraphError, build_graph, check_type_pairs, graph_stats
from gid.tracegen import TraceConfig, generate

from oracles import random_events

F, P, U, I = EntityType.FILE, EntityType.PROCESS, EntityType.UDSOCKET, EntityType.INETSOCKET
W = TimeWindow(0, 3600)
GOLDEN = Path(__file__).parent / "data" / "golden_graph.json"


def small_events():
    f, vim, sock, bash = Entity("/etc/passwd", F, "h"), Entity("vim", P, "h"), Entity("inet:1", I, "h"), Entity("bash", P, "h")
    return [Event(f, vim, 10), Event(f, vim, 10), Event(f, vim, 40), Event(vim, sock, 50),
            Event(bash, vim, 5), Event(sock, vim, 3599)]


def test_empty():
    g = build_graph([], W)
    assert g.n_vertices == 0 and g.n_edges == 0
    assert graph_stats(g) == {"P": 0, "F": 0, "I": 0, "U": 0, "edges": 0, "timestamps": 0}


def test_dedup_timestamps():
    a, b = Entity("A", P, "h"), Entity("B", F, "h")
    g = build_graph([Event(a, b, 1), Event(a, b, 1), Event(a, b, 5)], W)
    assert g.n_edges == 1
    assert g.timestamps(g.index["A"], g.index["B"]) == (1, 5)
    assert graph_stats(g) == {"P": 1, "F": 1, "I": 0, "U": 0, "edges": 1, "timestamps": 2}


def test_outside_window_and_mixed_hosts():
    a, b = Entity("A", P, "h"), Entity("B", F, "h")
    with pytest.raises(GraphError):
        build_graph([Event(a, b, 3600)], W)
    c, d = Entity("A", P, "other"), Entity("B", F, "other")
    with pytest.raises(GraphError):
        build_graph([Event(a, b, 1), Event(c, d, 2)], W)


def test_vertices_sorted_by_id_and_adjacency():
    g = build_graph(small_events(), W)
    ids = [v.id for v in g.vertices]
    assert ids == sorted(ids)
    vim = g.index["vim"]
    assert g.out_adj[vim] == [g.index["inet:1"]]
    assert g.in_adj[vim] == sorted([g.index["/etc/passwd"], g.index["bash"], g.index["inet:1"]])
    assert g.earliest_at_or_after(g.index["/etc/passwd"], vim, 11) == 40
    assert g.earliest_at_or_after(g.index["/etc/passwd"], vim, 41) is None


def test_golden_dump():
    g = build_graph(small_events(), W)
    assert json.loads(g.dumps()) == json.loads(GOLDEN.read_text())
    back = CompactGraph.from_dict(json.loads(GOLDEN.read_text()))
    assert back.edges == g.edges and back.vertices == g.vertices


def test_from_dict_rejects_bad_pair():
    d = json.loads(GOLDEN.read_text())
    d["edges"].append({"src": "/etc/passwd", "dst": "inet:1", "timestamps": [1]})
    with pytest.raises(GraphError):
        CompactGraph.from_dict(d)


def test_thousand_events_ten_pairs():
    rng = np.random.default_rng(3)
    ents = [Entity(f"p{i}", P, "h") for i in range(10)] + [Entity(f"f{i}", F, "h") for i in range(10)]
    evs = [Event(ents[k], ents[10 + k], int(rng.integers(3600))) for k in rng.integers(0, 10, 1000)]
    g = build_graph(evs, W)
    tally: dict = {}
    for e in evs:
        tally.setdefault((e.src.id, e.dst.id), set()).add(e.t)
    assert g.n_edges == len(tally) == 10
    assert g.n_timestamps == sum(len(v) for v in tally.values()) <= 1000


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 25), m=st.integers(0, 300))
@settings(max_examples=150, deadline=None)
def test_compression_and_expansion(seed, n, m):
    rng = np.random.default_rng(seed)
    evs = random_events(rng, n, m, max_ts=int(rng.integers(1, 3600)))
    g = build_graph(evs, W)
    assert g.n_edges <= len(evs) and g.n_timestamps <= len(evs)
    assert Counter(g.expand()) == Counter(set(evs))
    assert check_type_pairs(g) == []
    assert all(ts and list(ts) == sorted(set(ts)) and all(t in W for t in ts) for ts in g.edges.values())
    involved = {e.src.id for e in evs} | {e.dst.id for e in evs}
    assert {v.id for v in g.vertices} == involved


def test_generated_trace_builds_clean():
    evs, _ = generate(TraceConfig(hosts=1, hours=1, seed=2))
    g = build_graph(evs, TimeWindow(evs[0].t // 3600 * 3600))
    assert check_type_pairs(g) == []
    assert g.n_edges <= len(evs)
