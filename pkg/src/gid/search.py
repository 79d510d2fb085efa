"""Candidate path search under the time-order constraint.

A path n_1..n_r is time-ordered when, for every pair of consecutive hops,
some timestamp on the first hop is <= some timestamp on the second, i.e.
min T(n_i, n_i+1) <= max T(n_i+1, n_i+2).  With ``strict_chain`` the path
must instead admit one non-decreasing timestamp per hop across the whole
path; the earliest feasible timestamp is carried greedily, which is exact
because choosing a smaller time never removes a later option.
"""
from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .events import EventSequence
from .graph import CompactGraph
from .patterns import PathPattern, slot_matches

Path_ = tuple[int, ...]


def hop_timestamps(g: CompactGraph, path: Sequence[int]) -> tuple[int, ...]:
    """Representative hop times: the earliest non-decreasing chain.

    Where no such chain continues (possible in the pairwise mode) the hop
    falls back to its earliest timestamp and the chain restarts from there.
    """
    out = []
    t = None
    for a, b in zip(path, path[1:]):
        ts = g.edges[(a, b)]
        if t is None:
            t = ts[0]
        else:
            k = bisect_left(ts, t)
            t = ts[k] if k < len(ts) else ts[0]
        out.append(t)
    return tuple(out)


def to_sequence(g: CompactGraph, path: Sequence[int]) -> EventSequence:
    return EventSequence(tuple(g.vertices[i] for i in path), hop_timestamps(g, path))


def iter_paths(g: CompactGraph, patterns: Sequence[PathPattern] | None, max_len: int, *,
               strict_chain: bool = False, max_span: int | None = None) -> Iterator[Path_]:
    """Depth-first generator of candidate paths in lexicographic index order."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    verts = g.vertices
    adj = g.out_adj
    edges = g.edges
    pats = list(patterns) if patterns else None
    if pats is not None:
        max_len = min(max_len, max(len(p) for p in pats))
    tmin = {e: ts[0] for e, ts in edges.items()}
    tmax = {e: ts[-1] for e, ts in edges.items()}

    def alive_after(alive, pos, v):
        ent = verts[v]
        return tuple(k for k in alive if len(pats[k]) > pos and slot_matches(ent, pats[k].slots[pos]))

    def emit_ok(path, alive):
        if alive is not None and not any(len(pats[k]) == len(path) for k in alive):
            return False
        if max_span is not None:
            hts = hop_timestamps(g, path)
            if max(hts) - min(hts) > max_span:
                return False
        return True

    def extend(path, state, alive):
        u = path[-1]
        depth = len(path)
        for w in adj[u]:
            if w in path:
                continue
            e = (u, w)
            if strict_chain:
                ts = edges[e]
                k = bisect_left(ts, state)
                if k == len(ts):
                    continue
                nstate = ts[k]
            else:
                if state > tmax[e]:
                    continue
                nstate = tmin[e]
            nalive = None
            if alive is not None:
                nalive = alive_after(alive, depth, w)
                if not nalive:
                    continue
            npath = path + (w,)
            if emit_ok(npath, nalive):
                yield npath
            if depth + 1 < max_len:
                yield from extend(npath, nstate, nalive)

    start_alive = tuple(range(len(pats))) if pats is not None else None
    for s in range(len(verts)):
        alive = start_alive
        if pats is not None:
            alive = alive_after(alive, 0, s)
            if not alive:
                continue
        for w in adj[s]:
            e = (s, w)
            nalive = alive
            if alive is not None:
                nalive = alive_after(alive, 1, w)
                if not nalive:
                    continue
            path = (s, w)
            if emit_ok(path, nalive):
                yield path
            if max_len > 2:
                yield from extend(path, tmin[e], nalive)


@dataclass(eq=False)
class CandidateSet:
    graph: CompactGraph
    patterns: tuple[PathPattern, ...] | None
    paths: list[Path_]
    max_len: int
    strict_chain: bool = False
    _by_length: dict[int, list[int]] | None = field(default=None, init=False, repr=False)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def sequences(self) -> list[EventSequence]:
        return [to_sequence(self.graph, p) for p in self.paths]

    def by_length(self) -> dict[int, list[int]]:
        """Length -> positions in ``paths``."""
        if self._by_length is None:
            groups: dict[int, list[int]] = {}
            for k, p in enumerate(self.paths):
                groups.setdefault(len(p), []).append(k)
            self._by_length = groups
        return self._by_length

    def dump_jsonl(self, fh) -> None:
        g = self.graph
        for p in self.paths:
            fh.write(json.dumps({"path": [g.vertices[i].id for i in p],
                                 "hop_timestamps": list(hop_timestamps(g, p))}) + "\n")


def find_candidates(g: CompactGraph, patterns: Sequence[PathPattern] | None = None,
                    max_len: int = 5, *, strict_chain: bool = False,
                    max_span: int | None = None) -> CandidateSet:
    """All simple time-ordered paths of 2..max_len nodes matching a pattern.

    ``patterns=None`` (or empty) means pattern-free search.  Paths come back
    ordered by (length, entity ids).
    """
    paths = list(iter_paths(g, patterns, max_len, strict_chain=strict_chain, max_span=max_span))
    paths.sort(key=lambda p: (len(p), p))
    return CandidateSet(g, tuple(patterns) if patterns else None, paths, max_len, strict_chain)
