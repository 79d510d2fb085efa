"""Compact per-window graph G = (V, E, T).

One vertex per entity, one edge per ordered entity pair, and per edge the
sorted set of distinct timestamps at which that interaction happened.
"""
from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable

from .events import ALLOWED_PAIRS, Entity, EntityType, Event, TimeWindow


class GraphError(ValueError):
    pass


@dataclass(eq=False)
class CompactGraph:
    """Immutable once built; share freely between threads.

    Vertices are ordered by entity id, so comparing index tuples compares
    paths lexicographically by entity id.
    """

    window: TimeWindow
    host: str | None
    vertices: tuple[Entity, ...]
    edges: dict[tuple[int, int], tuple[int, ...]]
    index: dict[str, int] = field(init=False, repr=False)
    out_adj: list[list[int]] = field(init=False, repr=False)
    in_adj: list[list[int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.index = {v.id: i for i, v in enumerate(self.vertices)}
        self.out_adj = [[] for _ in self.vertices]
        self.in_adj = [[] for _ in self.vertices]
        for i, j in sorted(self.edges):
            self.out_adj[i].append(j)
            self.in_adj[j].append(i)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_timestamps(self) -> int:
        return sum(len(ts) for ts in self.edges.values())

    def etype(self, i: int) -> EntityType:
        return self.vertices[i].etype

    def timestamps(self, src: int, dst: int) -> tuple[int, ...]:
        return self.edges.get((src, dst), ())

    def earliest_at_or_after(self, src: int, dst: int, t: int) -> int | None:
        ts = self.edges[(src, dst)]
        k = bisect_left(ts, t)
        return ts[k] if k < len(ts) else None

    def expand(self) -> list[Event]:
        """Deduplicated event list the graph was built from."""
        out = []
        for (i, j), ts in sorted(self.edges.items()):
            a, b = self.vertices[i], self.vertices[j]
            out.extend(Event(a, b, t) for t in ts)
        return out

    def to_dict(self) -> dict:
        return {
            "host": self.host,
            "window_start": self.window.start,
            "window_secs": self.window.duration,
            "vertices": [{"id": v.id, "type": v.etype.value} for v in self.vertices],
            "edges": [{"src": self.vertices[i].id, "dst": self.vertices[j].id, "timestamps": list(ts)}
                      for (i, j), ts in sorted(self.edges.items())],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "CompactGraph":
        host = d.get("host") or ""
        window = TimeWindow(d["window_start"], d["window_secs"])
        ents = {v["id"]: Entity(v["id"], EntityType(v["type"]), host) for v in d["vertices"]}
        sets = {}
        for e in d["edges"]:
            a, b = ents[e["src"]], ents[e["dst"]]
            if (a.etype, b.etype) not in ALLOWED_PAIRS:
                raise GraphError(f"disallowed interaction {a.etype}->{b.etype}")
            sets[(a.id, b.id)] = set(e["timestamps"])
        return _assemble(window, d.get("host"), ents.values(), sets)


def _assemble(window, host, entities, sets) -> CompactGraph:
    verts = tuple(sorted(entities, key=lambda v: v.id))
    index = {v.id: i for i, v in enumerate(verts)}
    edges = {(index[a], index[b]): tuple(sorted(ts)) for (a, b), ts in sets.items()}
    return CompactGraph(window, host, verts, edges)


def build_graph(events: Iterable[Event], window: TimeWindow) -> CompactGraph:
    """Collapse a window's events into the compact graph.

    Raises GraphError if an event falls outside ``window`` or the events
    come from more than one host.
    """
    host = None
    ents: dict[str, Entity] = {}
    sets: dict[tuple[str, str], set[int]] = {}
    start, end = window.start, window.end
    for e in events:
        if not start <= e.t < end:
            raise GraphError(f"event at t={e.t} outside window [{start}, {end})")
        if host is None:
            host = e.host
        elif e.host != host:
            raise GraphError(f"mixed hosts in one graph: {host!r} and {e.host!r}")
        for ent in (e.src, e.dst):
            prev = ents.setdefault(ent.id, ent)
            if prev.etype is not ent.etype:
                raise GraphError(f"entity {ent.id!r} has conflicting types")
        key = (e.src.id, e.dst.id)
        ts = sets.get(key)
        if ts is None:
            sets[key] = {e.t}
        else:
            ts.add(e.t)
    return _assemble(window, host, ents.values(), sets)


def graph_stats(g: CompactGraph) -> dict[str, int]:
    counts = {t.value: 0 for t in EntityType}
    for v in g.vertices:
        counts[v.etype.value] += 1
    return {"P": counts["P"], "F": counts["F"], "I": counts["I"], "U": counts["U"],
            "edges": g.n_edges, "timestamps": g.n_timestamps}


def check_type_pairs(g: CompactGraph) -> list[tuple[str, str]]:
    """Edges whose endpoint types are not an allowed interaction (should be empty)."""
    return [(g.vertices[i].id, g.vertices[j].id) for i, j in g.edges
            if (g.vertices[i].etype, g.vertices[j].etype) not in ALLOWED_PAIRS]
