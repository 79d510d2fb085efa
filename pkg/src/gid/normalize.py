"""Per-length Box-Cox normalisation of path anomaly scores.

Longer paths collect more factors, so raw scores are only comparable within
one length group.  Each group is Box-Cox transformed with the lambda that
maximises the profile log-likelihood, then standardised to zero mean and
unit variance so the groups can be ranked together.

Everything here works on ``log q`` rather than ``q``: anomaly scores sit
within 1e-20 of 1.0 for long paths, and ``log1p(-ns)`` keeps them apart
where ``1 - ns`` would round to exactly 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

EPS = 1e-12
LAMBDA_RANGE = (-5.0, 5.0)
LAMBDA_TOL = 1e-4
TARGETS = ("neglogns", "score")

_INVPHI = (math.sqrt(5) - 1) / 2


class DomainError(ValueError):
    pass


def boxcox(q, lam: float):
    """(q**lam - 1) / lam, or log q at lam == 0.  Requires q > 0."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError("Box-Cox needs strictly positive input")
    out = boxcox_log(np.log(q), lam)
    return float(out) if out.ndim == 0 else out


def boxcox_log(logq, lam: float) -> np.ndarray:
    logq = np.asarray(logq, dtype=float)
    if lam == 0:
        return logq.copy()
    return np.expm1(lam * logq) / lam


def profile_loglik(logq: np.ndarray, lam: float) -> float:
    """Profile log-likelihood of lam for log-scores ``logq``."""
    t = boxcox_log(logq, lam)
    var = np.mean((t - t.mean()) ** 2)
    if not var > 0:
        return -math.inf
    return -0.5 * len(logq) * math.log(var) + (lam - 1) * float(np.sum(logq))


@dataclass(frozen=True)
class LambdaFit:
    lam: float
    loglik: float
    degenerate: bool = False


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def fit_lambda_log(logq, lo: float = LAMBDA_RANGE[0], hi: float = LAMBDA_RANGE[1],
                   tol: float = LAMBDA_TOL) -> LambdaFit:
    logq = np.asarray(logq, dtype=float)
    if len(logq) < 3:
        raise ValueError("need at least three scores to fit lambda")
    if np.ptp(logq) == 0:
        return LambdaFit(1.0, -math.inf, True)
    f = lambda lam: profile_loglik(logq, lam)
    # coarse scan to pick the bracket, golden-section inside it
    grid = np.linspace(lo, hi, 41)
    vals = [f(g) for g in grid]
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    lam, ll = _golden_max(f, a, b, tol)
    if ll < vals[i]:
        lam, ll = float(grid[i]), vals[i]
    return LambdaFit(float(lam), float(ll))


def fit_lambda(scores, **kw) -> LambdaFit:
    """Maximum-likelihood Box-Cox lambda for strictly positive ``scores``."""
    q = np.asarray(scores, dtype=float)
    if np.any(q <= 0):
        raise DomainError("Box-Cox needs strictly positive input")
    return fit_lambda_log(np.log(q), **kw)


def to_log_target(log_ns, target: str = "neglogns") -> np.ndarray:
    """log of the value that gets Box-Cox transformed, from log NS.

    ``score``: q = 1 - NS, clamped to [EPS, 1].
    ``neglogns``: q = -log NS, clamped below at EPS; NS == 0 gives +inf.
    """
    log_ns = np.asarray(log_ns, dtype=float)
    if target == "score":
        with np.errstate(divide="ignore"):
            lq = np.log1p(-np.exp(log_ns))
        return np.maximum(lq, math.log(EPS))
    if target == "neglogns":
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(-log_ns, EPS))
    raise ValueError(f"unknown normalisation target {target!r}")


@dataclass(frozen=True)
class LengthGroupStats:
    length: int
    lam: float
    mu: float
    sigma: float
    n: int
    degenerate: bool = False
    low_sample: bool = False

    def row(self) -> dict:
        return {"r": self.length, "lambda": self.lam, "mu": self.mu, "sigma": self.sigma, "n": self.n,
                "degenerate": self.degenerate, "low_sample": self.low_sample}


def fit_group(length: int, log_q) -> LengthGroupStats:
    """Fit (lambda, mu, sigma) on a group's log-targets; infinite entries are ignored."""
    lq = np.asarray(log_q, dtype=float)
    lq = lq[np.isfinite(lq)]
    n = len(lq)
    if n < 3:
        return LengthGroupStats(length, 1.0, 0.0, 1.0, n, low_sample=True)
    fit = fit_lambda_log(lq)
    t = boxcox_log(lq, fit.lam)
    mu, sigma = float(t.mean()), float(t.std())
    if fit.degenerate or sigma == 0:
        return LengthGroupStats(length, fit.lam, mu, 0.0, n, degenerate=True)
    return LengthGroupStats(length, fit.lam, mu, sigma, n)


def apply_group(st: LengthGroupStats, log_q, raw_score) -> np.ndarray:
    """Normalised scores for paths of one length group.

    Low-sample groups pass the raw anomaly score through unchanged;
    degenerate (zero-variance) groups are only centred.
    """
    lq = np.asarray(log_q, dtype=float)
    if st.low_sample:
        return np.asarray(raw_score, dtype=float).copy()
    inf = np.isposinf(lq)
    t = boxcox_log(np.where(inf, 0.0, lq), st.lam)
    z = t - st.mu if st.degenerate else (t - st.mu) / st.sigma
    z[inf] = math.inf
    return z


def normalize_group(paths, target: str = "neglogns", fit_on=None):
    """Normalise one length group of ScoredPath objects in place.

    Returns ``([(path, normalized), ...], stats)``.  ``fit_on`` optionally
    restricts the lambda/mu/sigma fit to a subset of the paths.
    """
    lengths = {p.length for p in paths}
    if len(lengths) > 1:
        raise ValueError("normalize_group needs paths of a single length")
    length = lengths.pop() if lengths else 0
    log_ns = np.array([p.log_ns for p in paths])
    lq = to_log_target(log_ns, target)
    fit_lq = lq if fit_on is None else to_log_target([p.log_ns for p in fit_on], target)
    st = fit_group(length, fit_lq)
    z = apply_group(st, lq, -np.expm1(log_ns))
    for p, v in zip(paths, z):
        p.normalized = float(v)
    return [(p, p.normalized) for p in paths], st


def qq_points(values) -> tuple[np.ndarray, np.ndarray]:
    """(standard-normal quantiles, sorted standardised values) for a q-q plot."""
    v = np.sort(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    n = len(v)
    if n == 0:
        return np.empty(0), np.empty(0)
    theo = _st.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    sd = v.std()
    return theo, (v - v.mean()) / (sd if sd > 0 else 1.0)


def skewness(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(_st.skew(v[np.isfinite(v)]))
