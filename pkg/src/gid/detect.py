"""Top-k suspicious paths per window, exhaustively or with a threshold algorithm.

Both modes rank candidates by their per-length normalised score.  The
normalisation (lambda, mu, sigma per length group) is fitted on a fixed,
hash-selected sample of each group, so the exhaustive and the optimised
search see exactly the same score for every path and return the same
ranking.

The optimised search keeps ascending cursors over sender scores and
receiver scores (one pair per entity type) and one ascending cursor over
transition probabilities.  A path that touches no popped entity or edge is
built only from items the cursors have not reached yet, so its
log-normality is at least the cheapest composition of those items.  Box-Cox
plus standardisation is increasing, so that composition maps to an upper
bound on the unexplored normalised score.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as _st

from .events import ALLOWED_PAIRS, EntityType, Event, TimeWindow
from .graph import CompactGraph, build_graph
from .normalize import LengthGroupStats, apply_group, fit_group, to_log_target
from .patterns import PathPattern
from .scoring import (DEFAULT_MAX_ITER, DEFAULT_RESTART, DEFAULT_TOL, ScoredPath, ScoreState,
                      TransitionMatrix, random_walk)
from .search import CandidateSet, find_candidates, hop_timestamps

MODES = ("exhaustive", "optimized")
DEFAULT_FIT_SAMPLE = 500

_TYPES = tuple(EntityType)
_TIDX = {t: i for i, t in enumerate(_TYPES)}


@dataclass
class DetectConfig:
    k: int = 10
    max_len: int = 5
    restart: float = DEFAULT_RESTART
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    mode: str = "optimized"
    patterns: tuple[PathPattern, ...] | None = None
    target: str = "neglogns"
    p_threshold: float = 0.05
    confidence_threshold: float = 0.9
    max_span: int | None = None
    strict_blocks: bool = False
    strict_chain: bool = False
    fit_sample: int = DEFAULT_FIT_SAMPLE
    selection_adjusted: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.restart < 1:
            raise ValueError("restart ratio must lie in (0, 1)")
        if not 0 < self.p_threshold <= 1 or not 0 <= self.confidence_threshold < 1:
            raise ValueError("thresholds out of range")
        if self.fit_sample < 3:
            raise ValueError("fit_sample must be >= 3")


# ---------------------------------------------------------------------------
# candidate arrays shared by both modes

class _Candidates:
    """Candidate paths as padded index arrays plus per-hop log factors."""

    def __init__(self, cands: CandidateSet, state: ScoreState, a: TransitionMatrix):
        g = cands.graph
        self.cands = cands
        self.n = n = len(cands)
        paths = cands.paths
        self.lengths = np.fromiter((len(p) for p in paths), dtype=np.int64, count=n)
        width = int(self.lengths.max()) if n else 2
        m = np.full((n, width), -1, dtype=np.int64)
        for i, p in enumerate(paths):
            m[i, :len(p)] = p
        self.m = m
        nv = g.n_vertices
        # graph edges in key order; per-hop edge ids
        self.edge_keys = np.array(sorted(s * nv + d for s, d in g.edges), dtype=np.int64)
        src, dst = np.divmod(self.edge_keys, nv)
        with np.errstate(divide="ignore"):
            self.edge_la = np.log(a.probs(src, dst))
        self.edge_src, self.edge_dst = src, dst
        hop_keys = np.where(m[:, 1:] >= 0, m[:, :-1] * nv + m[:, 1:], -1)
        self.e = np.where(hop_keys >= 0, np.searchsorted(self.edge_keys, hop_keys), -1)
        self.lx = state.log_x
        self.ly = state.log_y
        self.nv = nv
        self.vtype = np.array([_TIDX[v.etype] for v in g.vertices], dtype=np.int64)

    def log_ns(self, ids: np.ndarray) -> np.ndarray:
        """log NS of the given candidates; identical floats whatever the batch."""
        out = np.empty(len(ids))
        if not len(ids):
            return out
        lengths = self.lengths[ids]
        for r in np.unique(lengths):
            sel = lengths == r
            rows = ids[sel]
            v = self.m[rows, :r]
            e = self.e[rows, :r - 1]
            out[sel] = (self.lx[v[:, :-1]] + self.edge_la[e] + self.ly[v[:, 1:]]).sum(axis=1)
        return out

    def incidence(self) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
        """CSR maps vertex -> candidates and edge -> candidates."""
        def csr(keys, owners, size):
            order = np.argsort(keys, kind="stable")
            ptr = np.zeros(size + 1, dtype=np.int64)
            np.add.at(ptr, keys + 1, 1)
            return np.cumsum(ptr), owners[order]

        owners = np.repeat(np.arange(self.n), self.m.shape[1])
        flat = self.m.ravel()
        ok = flat >= 0
        vert = csr(flat[ok], owners[ok], self.nv)
        owners = np.repeat(np.arange(self.n), self.e.shape[1])
        flat = self.e.ravel()
        ok = flat >= 0
        edge = csr(flat[ok], owners[ok], len(self.edge_keys))
        return vert, edge


def fit_positions(paths: Sequence[Sequence[int]], limit: int) -> np.ndarray:
    """Deterministic per-length sample of at most ``limit`` candidates.

    Candidates are ranked by a CRC of their index tuple, which spreads the
    sample over the whole group without depending on the score.
    """
    groups: dict[int, list[tuple[int, int]]] = {}
    for i, p in enumerate(paths):
        h = zlib.crc32(np.asarray(p, dtype=np.int32).tobytes())
        groups.setdefault(len(p), []).append((h, i))
    out = []
    for items in groups.values():
        items.sort()
        out.extend(i for _, i in items[:limit])
    return np.array(sorted(out), dtype=np.int64)


@dataclass
class Normalizer:
    """Per-length fitted statistics and the map log NS -> normalised score."""

    target: str
    groups: dict[int, LengthGroupStats]

    @classmethod
    def fit(cls, lengths: np.ndarray, log_ns: np.ndarray, target: str = "neglogns") -> "Normalizer":
        groups = {}
        for r in np.unique(lengths):
            sel = lengths == r
            groups[int(r)] = fit_group(int(r), to_log_target(log_ns[sel], target))
        return cls(target, groups)

    def transform(self, length: int, log_ns) -> np.ndarray:
        log_ns = np.atleast_1d(np.asarray(log_ns, dtype=float))
        st = self.groups.get(length)
        if st is None:  # length never seen in the fit sample
            st = LengthGroupStats(length, 1.0, 0.0, 1.0, 0, low_sample=True)
        with np.errstate(over="ignore", invalid="ignore"):
            return apply_group(st, to_log_target(log_ns, self.target), -np.expm1(log_ns))

    def transform_many(self, lengths: np.ndarray, log_ns: np.ndarray) -> np.ndarray:
        out = np.empty(len(log_ns))
        for r in np.unique(lengths):
            sel = lengths == r
            out[sel] = self.transform(int(r), log_ns[sel])
        return out


@dataclass
class TopK:
    ranked: list[ScoredPath]
    scored_count: int
    n_candidates: int
    normalizer: Normalizer
    reference: np.ndarray  # normalised scores of the fit sample outside the top-k
    rounds: int = 0
    scored: np.ndarray | None = None  # bool mask over candidates that were scored


def _rank(ids: np.ndarray, z: np.ndarray, paths: list, k: int) -> list[int]:
    """Positions of the k best: score descending, then path key ascending."""
    order = sorted(range(len(ids)), key=lambda j: (-z[j], paths[ids[j]]))
    return [int(ids[j]) for j in order[:k]]


def _prepare(cands, state, a, target, fit_sample, normalizer):
    arr = _Candidates(cands, state, a)
    sample = fit_positions(cands.paths, fit_sample)
    lns_sample = arr.log_ns(sample)
    if normalizer is None:
        normalizer = Normalizer.fit(arr.lengths[sample], lns_sample, target)
    return arr, sample, lns_sample, normalizer


def _finish(arr, top, lns, z, sample, z_sample, normalizer, scored, rounds) -> TopK:
    paths = arr.cands.paths
    ranked = [ScoredPath(paths[i], float(lns[i]), float(z[i])) for i in top]
    keep = ~np.isin(sample, np.asarray(top, dtype=np.int64))
    return TopK(ranked, int(scored.sum()), arr.n, normalizer, z_sample[keep], rounds, scored)


def topk_exhaustive(candidates: CandidateSet, state: ScoreState, a: TransitionMatrix, k: int, *,
                    target: str = "neglogns", fit_sample: int = DEFAULT_FIT_SAMPLE,
                    normalizer: Normalizer | None = None) -> TopK:
    """Score and normalise every candidate, return the k best."""
    if k < 1:
        raise ValueError("k must be >= 1")
    arr, sample, lns_sample, normalizer = _prepare(candidates, state, a, target, fit_sample, normalizer)
    ids = np.arange(arr.n)
    lns = arr.log_ns(ids)
    z = normalizer.transform_many(arr.lengths, lns)
    top = _rank(ids, z, candidates.paths, k)
    return _finish(arr, top, lns, z, sample, z[sample], normalizer, np.ones(arr.n, dtype=bool), 0)


def _lns_bound(hx: np.ndarray, hy: np.ndarray, he: float, r: int) -> float:
    """Smallest log NS any r-node path built from cursor heads can reach."""
    f = np.zeros(len(_TYPES))
    for _ in range(r - 1):
        nf = np.full(len(_TYPES), math.inf)
        for (s, d) in ALLOWED_PAIRS:
            i, j = _TIDX[s], _TIDX[d]
            v = f[i] + hx[i] + he + hy[j]
            if v < nf[j]:
                nf[j] = v
        f = nf
    return float(f.min())


def _walk_bounds(arr: "_Candidates", vlive: np.ndarray, elive: np.ndarray, rmax: int) -> list[float]:
    """Smallest log NS over walks of 2..rmax nodes through live vertices and edges.

    Every unexplored path is such a walk, so this is a lower bound on its
    log NS; entry r - 2 holds the bound for r-node paths.
    """
    ok = elive & vlive[arr.edge_src] & vlive[arr.edge_dst]
    src, dst = arr.edge_src[ok], arr.edge_dst[ok]
    w = arr.lx[src] + arr.edge_la[ok] + arr.ly[dst]
    f = np.where(vlive, 0.0, math.inf)
    out = []
    for _ in range(rmax - 1):
        nf = np.full(arr.nv, math.inf)
        if len(src):
            fs = f[src]
            with np.errstate(invalid="ignore"):
                cand = np.where(np.isposinf(fs), math.inf, fs + w)
            np.minimum.at(nf, dst, cand)
        f = nf
        out.append(float(f.min()))
    return out


def topk_optimized(g: CompactGraph, patterns: Sequence[PathPattern] | None, state: ScoreState,
                   a: TransitionMatrix, k: int, max_len: int, *,
                   candidates: CandidateSet | None = None, target: str = "neglogns",
                   fit_sample: int = DEFAULT_FIT_SAMPLE, normalizer: Normalizer | None = None,
                   order: str = "ascending", bound: str = "walk", strict_chain: bool = False,
                   max_span: int | None = None) -> TopK:
    """Threshold-algorithm top-k over the candidate paths of ``g``.

    ``bound="heads"`` composes the bound from the cursor heads alone (per
    type, over allowed type sequences).  ``bound="walk"`` runs the same
    composition over the graph itself, restricted to vertices and edges no
    cursor has passed; it is never looser and usually stops much earlier.

    ``order="descending"`` pops the cursors from the largest values first and
    stops on the same test; the bound is then not an upper bound and the
    result can be wrong.  It exists only for comparison.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if order not in ("ascending", "descending"):
        raise ValueError("order must be 'ascending' or 'descending'")
    if bound not in ("walk", "heads"):
        raise ValueError("bound must be 'walk' or 'heads'")
    cands = candidates if candidates is not None else find_candidates(
        g, patterns, max_len, strict_chain=strict_chain, max_span=max_span)
    arr, sample, lns_sample, normalizer = _prepare(cands, state, a, target, fit_sample, normalizer)
    paths = cands.paths
    n = arr.n
    lns = np.full(n, np.nan)
    z = np.full(n, np.nan)
    scored = np.zeros(n, dtype=bool)
    lns[sample] = lns_sample
    z[sample] = normalizer.transform_many(arr.lengths[sample], lns_sample)
    scored[sample] = True
    z_sample = z[sample].copy()
    top = _rank(sample, z[sample], paths, k)

    (vptr, vown), (eptr, eown) = arr.incidence()
    desc = order == "descending"
    nt = len(_TYPES)
    # per-type vertex cursors over log x and log y, and one edge cursor over log A
    xq, yq = [], []
    for t in range(nt):
        vs = np.flatnonzero(arr.vtype == t)
        xs = vs[np.lexsort((vs, arr.lx[vs]))]
        ys = vs[np.lexsort((vs, arr.ly[vs]))]
        xq.append(xs[::-1] if desc else xs)
        yq.append(ys[::-1] if desc else ys)
    eq = np.lexsort((np.arange(len(arr.edge_la)), arr.edge_la))
    if desc:
        eq = eq[::-1]
    xc = [0] * nt
    yc = [0] * nt
    ec = 0
    vlive = np.ones(arr.nv, dtype=bool)
    elive = np.ones(len(eq), dtype=bool)
    remaining = {r: int(np.sum(arr.lengths[~scored] == r)) for r in range(2, arr.m.shape[1] + 1)}
    rounds = 0

    while sum(remaining.values()):
        rounds += 1
        newly: list[np.ndarray] = []
        for t in range(nt):
            for q, c in ((xq, xc), (yq, yc)):
                if c[t] < len(q[t]):
                    v = q[t][c[t]]
                    c[t] += 1
                    vlive[v] = False
                    newly.append(vown[vptr[v]:vptr[v + 1]])
        if ec < len(eq):
            e = eq[ec]
            ec += 1
            elive[e] = False
            newly.append(eown[eptr[e]:eptr[e + 1]])
        batch = np.unique(np.concatenate(newly)) if newly else np.empty(0, dtype=np.int64)
        batch = batch[~scored[batch]]
        if len(batch):
            scored[batch] = True
            lns[batch] = arr.log_ns(batch)
            z[batch] = normalizer.transform_many(arr.lengths[batch], lns[batch])
            for r, c in zip(*np.unique(arr.lengths[batch], return_counts=True)):
                remaining[int(r)] -= int(c)
            top = _rank(np.concatenate([np.asarray(top, dtype=np.int64), batch]),
                        np.concatenate([z[top], z[batch]]), paths, k)
        if sum(remaining.values()) == 0:
            break
        if len(top) < k:
            continue
        kth = z[top[-1]]
        rmax = max(r for r, left in remaining.items() if left)
        if bound == "walk" and not desc:
            lbs = _walk_bounds(arr, vlive, elive, rmax)
        else:
            hx = np.array([arr.lx[xq[t][xc[t]]] if xc[t] < len(xq[t]) else math.inf for t in range(nt)])
            hy = np.array([arr.ly[yq[t][yc[t]]] if yc[t] < len(yq[t]) else math.inf for t in range(nt)])
            he = arr.edge_la[eq[ec]] if ec < len(eq) else math.inf
            lbs = [_lns_bound(hx, hy, he, r) for r in range(2, rmax + 1)]
        ub = -math.inf
        for r, left in remaining.items():
            if left and lbs[r - 2] < math.inf:
                ub = max(ub, float(normalizer.transform(r, lbs[r - 2])[0]))
        if ub < kth:
            break

    return _finish(arr, top, lns, z, sample, z_sample, normalizer, scored, rounds)


# ---------------------------------------------------------------------------
# validation gate

@dataclass(frozen=True)
class Validation:
    validated: bool
    t_statistic: float
    p_value: float
    degenerate: bool = False

    @property
    def confidence(self) -> float:
        return 1.0 - self.p_value


def welch_greater(suspicious, others, margin: float = 0.0) -> tuple[float, float, bool]:
    """One-sided Welch test of mean(suspicious) - mean(others) > margin.

    A single suspicious value contributes no variance term.  Returns
    (t, p, degenerate); degenerate means both groups have zero variance.
    """
    s = np.asarray(suspicious, dtype=float)
    o = np.asarray(others, dtype=float)
    ns, no = len(s), len(o)
    vs = s.var(ddof=1) if ns > 1 else 0.0
    vo = o.var(ddof=1) if no > 1 else 0.0
    a, b = vs / ns, vo / no
    se2 = a + b
    if not se2 > 0:
        return 0.0, 1.0, True
    t = (s.mean() - o.mean() - margin) / math.sqrt(se2)
    den = (a * a / (ns - 1) if ns > 1 else 0.0) + (b * b / (no - 1) if no > 1 else 0.0)
    df = se2 * se2 / den
    return float(t), float(_st.t.sf(t, df)), False


def selection_margin(n: int, k: int) -> float:
    """Expected lead of the mean of the top k of n standard normals over the mean of the rest.

    The top-k of a window is selected for being large, so even pure
    background beats the remaining candidates by about this many standard
    deviations; the gate asks for a lead beyond it.
    """
    if n <= k:
        return 0.0
    q = _st.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))[::-1]
    return float(q[:k].mean() - q[k:].mean())


def validate(others, suspicious, *, p_threshold: float = 0.05, confidence_threshold: float = 0.9,
             margin: float = 0.0) -> Validation:
    """t-test gate: do the suspicious scores sit significantly above the others?

    ``others`` are the normalised scores of the remaining candidates.  An
    infinite suspicious score (a path through a zero-probability hop) is
    validated outright; other non-finite values are dropped.
    """
    s = np.asarray(suspicious, dtype=float)
    o = np.asarray(others, dtype=float)
    if len(s) < 1 or len(o) < 1:
        raise ValueError("validation needs at least one suspicious and one other score")
    if np.any(np.isposinf(s)):
        return Validation(True, math.inf, 0.0)
    s = s[np.isfinite(s)]
    o = o[np.isfinite(o)]
    if len(s) < 1 or len(o) < 1:
        return Validation(False, 0.0, 1.0, True)
    t, p, degenerate = welch_greater(s, o, margin)
    ok = (not degenerate) and p < p_threshold and (1.0 - p) > confidence_threshold
    return Validation(ok, t, p, degenerate)


# ---------------------------------------------------------------------------
# per-window pipeline

@dataclass
class AlertReport:
    window: TimeWindow
    host: str
    suspicious: list[ScoredPath]
    validated: bool
    t_statistic: float
    p_value: float
    scored_count: int
    n_candidates: int = 0
    degenerate: bool = False
    graph: CompactGraph | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        g = self.graph
        alerts = []
        for rank, sp in enumerate(self.suspicious, 1):
            alerts.append({
                "rank": rank,
                "score": _json_num(sp.normalized),
                "path": [{"id": g.vertices[i].id, "type": g.vertices[i].etype.value} for i in sp.path],
                "hop_timestamps": list(hop_timestamps(g, sp.path)),
            })
        return {"host": self.host, "window_start": self.window.start, "validated": self.validated,
                "t_statistic": _json_num(self.t_statistic), "p_value": self.p_value,
                "degenerate": self.degenerate, "candidates": self.n_candidates,
                "scored_count": self.scored_count, "alerts": alerts}


def _json_num(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass
class WindowResult:
    report: AlertReport
    iterations: int
    n_events: int
    stats: dict


def detect_graph(g: CompactGraph, cfg: DetectConfig, n_events: int = 0) -> WindowResult:
    """Run scoring, search, ranking and validation on one window graph."""
    a, state = random_walk(g, cfg.restart, cfg.tol, cfg.max_iter, cfg.strict_blocks)
    cands = find_candidates(g, cfg.patterns, cfg.max_len, strict_chain=cfg.strict_chain,
                            max_span=cfg.max_span)
    if len(cands) == 0:
        rep = AlertReport(g.window, g.host, [], False, 0.0, 1.0, 0, 0, True, g)
        return WindowResult(rep, state.iterations, n_events, {})
    if cfg.mode == "exhaustive":
        res = topk_exhaustive(cands, state, a, cfg.k, target=cfg.target, fit_sample=cfg.fit_sample)
    else:
        res = topk_optimized(g, cfg.patterns, state, a, cfg.k, cfg.max_len, candidates=cands,
                             target=cfg.target, fit_sample=cfg.fit_sample)
    sus = np.array([p.normalized for p in res.ranked])
    if len(res.reference) == 0:
        val = Validation(False, 0.0, 1.0, True)
    else:
        margin = 0.0
        if cfg.selection_adjusted:
            ref = res.reference[np.isfinite(res.reference)]
            sd = ref.std(ddof=1) if len(ref) > 1 else 0.0
            margin = selection_margin(res.n_candidates, len(sus)) * sd
        val = validate(res.reference, sus, p_threshold=cfg.p_threshold,
                       confidence_threshold=cfg.confidence_threshold, margin=margin)
    rep = AlertReport(g.window, g.host, res.ranked, val.validated, val.t_statistic, val.p_value,
                      res.scored_count, res.n_candidates, val.degenerate, g)
    return WindowResult(rep, state.iterations, n_events, {"candidates": res.n_candidates,
                                                          "scored": res.scored_count})


def detect_window(events: Sequence[Event], window: TimeWindow, cfg: DetectConfig) -> WindowResult:
    g = build_graph(events, window)
    return detect_graph(g, cfg, len(events))


def label_hit(report: AlertReport, label_path: Sequence[str]) -> bool:
    """Does the report's top-k cover the labelled attack?

    A hit is a ranked path that shares at least two hops with the attack,
    or all of its hops when the attack has only one.
    """
    g = report.graph
    if g is None:
        return False
    try:
        ids = [g.index[x] for x in label_path]
    except KeyError:
        return False
    hops = set(zip(ids, ids[1:]))
    need = min(2, len(hops))
    return any(len(hops & set(zip(sp.path, sp.path[1:]))) >= need for sp in report.suspicious)
