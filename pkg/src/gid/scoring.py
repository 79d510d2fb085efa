"""Sender/receiver scores by random walk with restart, and path anomaly scores.

Transition probabilities are timestamp-count weighted::

    A[i][j] = |T(v_i, v_j)| / sum_k |T(v_i, v_k)|

The restarted matrix is never materialised: with A' being A with dangling
rows replaced by uniform rows,

    Abar = (1 - c) * A' + c / N

and products with Abar / Abar^T are computed from the sparse A.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .events import EntityType, EventSequence
from .graph import CompactGraph

DEFAULT_RESTART = 0.6
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3g})")


@dataclass(eq=False)
class TransitionMatrix:
    n: int
    matrix: sp.csr_matrix
    dangling: np.ndarray  # bool per row
    edge_keys: np.ndarray  # sorted src * n + dst for every stored entry
    edge_probs: np.ndarray

    def prob(self, i: int, j: int) -> float:
        key = i * self.n + j
        k = np.searchsorted(self.edge_keys, key)
        if k < len(self.edge_keys) and self.edge_keys[k] == key:
            return float(self.edge_probs[k])
        return 0.0

    def probs(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Vectorised A[src, dst] lookup (zero where there is no edge)."""
        keys = np.asarray(src, dtype=np.int64) * self.n + np.asarray(dst, dtype=np.int64)
        if len(self.edge_keys) == 0:
            return np.zeros(keys.shape)
        k = np.searchsorted(self.edge_keys, keys)
        k = np.minimum(k, len(self.edge_keys) - 1)
        hit = self.edge_keys[k] == keys
        return np.where(hit, self.edge_probs[k], 0.0)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_transition(g: CompactGraph, strict_blocks: bool = False) -> TransitionMatrix:
    """Timestamp-count weighted transition matrix of ``g``.

    ``strict_blocks`` zeroes process->process transitions before row
    normalisation.
    """
    n = g.n_vertices
    if n == 0:
        raise ValueError("empty graph")
    rows, cols, w = [], [], []
    for (i, j), ts in g.edges.items():
        if strict_blocks and g.vertices[i].etype is EntityType.PROCESS and g.vertices[j].etype is EntityType.PROCESS:
            continue
        rows.append(i)
        cols.append(j)
        w.append(len(ts))
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    w = np.asarray(w, dtype=float)
    out = np.bincount(rows, weights=w, minlength=n) if len(rows) else np.zeros(n)
    probs = w / out[rows] if len(rows) else w
    m = sp.csr_matrix((probs, (rows, cols)), shape=(n, n))
    keys = rows * n + cols
    order = np.argsort(keys)
    return TransitionMatrix(n, m, out == 0, keys[order], probs[order])


@dataclass(eq=False)
class RestartMatrix:
    """Abar = (1 - c) * A' + c * R with R the uniform 1/N matrix."""

    base: TransitionMatrix
    c: float

    @property
    def n(self) -> int:
        return self.base.n

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n, c = self.n, self.c
        s = v.sum()
        av = self.base.matrix @ v + self.base.dangling * (s / n)
        return (1 - c) * av + c * s / n

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        n, c = self.n, self.c
        av = self.base.matrix.T @ v + v[self.base.dangling].sum() / n
        return (1 - c) * av + c * v.sum() / n

    def to_dense(self) -> np.ndarray:
        a = self.base.to_dense()
        a[self.base.dangling] = 1.0 / self.n
        return (1 - self.c) * a + self.c / self.n


def apply_restart(a: TransitionMatrix, c: float = DEFAULT_RESTART) -> RestartMatrix:
    if not 0 < c < 1:
        raise ValueError(f"restart ratio must lie in (0, 1), got {c}")
    return RestartMatrix(a, c)


@dataclass(eq=False)
class ScoreState:
    x: np.ndarray  # sender scores
    y: np.ndarray  # receiver scores
    iterations: int
    restart: float
    residual: float

    @property
    def log_x(self) -> np.ndarray:
        return np.log(self.x)

    @property
    def log_y(self) -> np.ndarray:
        return np.log(self.y)


def _l1(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


def converge_scores(abar: RestartMatrix, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    x0: np.ndarray | None = None, y0: np.ndarray | None = None) -> ScoreState:
    """Coupled hub/authority iteration on Abar until both vectors settle.

    Each step is y <- Abar^T x, x <- Abar y with L1 normalisation after every
    product, so x tends to the dominant eigenvector of Abar Abar^T and y to
    that of Abar^T Abar whatever the (non-negative) start.
    """
    n = abar.n
    x = _l1(np.ones(n) if x0 is None else np.asarray(x0, dtype=float))
    y = _l1(np.ones(n) if y0 is None else np.asarray(y0, dtype=float))
    resid = np.inf
    for it in range(1, max_iter + 1):
        ny = _l1(abar.rmatvec(x))
        nx = _l1(abar.matvec(ny))
        resid = max(np.abs(nx - x).sum(), np.abs(ny - y).sum())
        x, y = nx, ny
        if resid <= tol:
            return ScoreState(x, y, it, abar.c, float(resid))
    raise ConvergenceError(float(resid), max_iter)


def random_walk(g: CompactGraph, c: float = DEFAULT_RESTART, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER, strict_blocks: bool = False):
    a = build_transition(g, strict_blocks)
    return a, converge_scores(apply_restart(a, c), tol, max_iter)


@dataclass
class ScoredPath:
    path: tuple[int, ...]
    log_ns: float
    normalized: float | None = None

    @property
    def ns(self) -> float:
        return float(np.exp(self.log_ns))

    @property
    def raw_score(self) -> float:
        return 1.0 - self.ns

    @property
    def length(self) -> int:
        return len(self.path)


def log_normality(paths: Sequence[Sequence[int]], state: ScoreState, a: TransitionMatrix) -> np.ndarray:
    """log NS for a batch of index paths (any mix of lengths).

    NS(p) = prod_i x(v_i) * A(v_i, v_i+1) * y(v_i+1), summed in log space.
    A zero transition gives -inf.
    """
    out = np.empty(len(paths))
    if not len(paths):
        return out
    lx, ly = state.log_x, state.log_y
    lengths = np.fromiter((len(p) for p in paths), dtype=np.int64, count=len(paths))
    for length in np.unique(lengths):
        pos = np.flatnonzero(lengths == length)
        arr = np.array([paths[k] for k in pos], dtype=np.int64).reshape(len(pos), length)
        src, dst = arr[:, :-1], arr[:, 1:]
        with np.errstate(divide="ignore"):
            la = np.log(a.probs(src, dst))
        out[pos] = (lx[src] + la + ly[dst]).sum(axis=1)
    return out


def score_path(p: EventSequence | Sequence[int], state: ScoreState, a: TransitionMatrix,
               g: CompactGraph | None = None) -> ScoredPath:
    if isinstance(p, EventSequence):
        if g is None:
            raise ValueError("a graph is needed to index an EventSequence")
        p = tuple(g.index[n.id] for n in p.nodes)
    p = tuple(p)
    return ScoredPath(p, float(log_normality([p], state, a)[0]))
