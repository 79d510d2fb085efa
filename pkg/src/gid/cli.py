"""Command-line front end: generate traces, detect over tumbling windows, benchmark, q-q data."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .detect import MODES, DetectConfig, detect_graph, label_hit, topk_exhaustive, topk_optimized
from .events import EventLogError, TimeWindow, group_by_window, read_events
from .graph import GraphError, build_graph
from .normalize import TARGETS, apply_group, fit_group, qq_points, skewness, to_log_target
from .patterns import load_patterns
from .scoring import ConvergenceError, log_normality, random_walk
from .search import find_candidates
from .tracegen import TraceConfig, read_labels, write_trace

log = logging.getLogger("gid")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALERT = 2
REFERENCE_THROUGHPUT = 2_000_000  # events per minute, reference only


def _workers(n_tasks: int) -> int:
    cap = os.cpu_count() or 1
    env = os.environ.get("GID_THREADS")
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise SystemExit(f"GID_THREADS must be an integer, got {env!r}")
    return max(1, min(cap, n_tasks))


def _write_atomic(path: Path, payload) -> None:
    """JSON for anything but a str, which is written verbatim."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        if isinstance(payload, str):
            fh.write(payload)
        else:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")
    os.replace(tmp, path)


def _load_windows(path: str, window_secs: int):
    return group_by_window(read_events(path), window_secs)


def _detect_task(args):
    key, events, window_secs, cfg = args
    t0 = time.perf_counter()
    g = build_graph(events, TimeWindow(key[1], window_secs))
    res = detect_graph(g, cfg, len(events))
    return key, res, time.perf_counter() - t0


def _config_from_args(a) -> DetectConfig:
    patterns = tuple(load_patterns(a.patterns)) if a.patterns else None
    return DetectConfig(k=a.k, max_len=a.max_len, restart=a.restart, mode=a.mode, patterns=patterns,
                        target=a.normalize_on, p_threshold=a.p_threshold,
                        confidence_threshold=a.confidence_threshold, max_span=a.max_span,
                        strict_blocks=a.strict_blocks, strict_chain=a.strict_chain)


def _labels_for(a) -> list[dict] | None:
    if a.labels:
        return read_labels(a.labels)
    guess = Path(a.input).with_name("labels.jsonl")
    if guess.exists() and guess.resolve() != Path(a.input).resolve():
        return read_labels(guess)
    return None


def run_detect(a) -> int:
    cfg = _config_from_args(a)
    out = Path(a.out)
    t0 = time.perf_counter()
    groups = _load_windows(a.input, a.window_secs)
    n_events = sum(len(v) for v in groups.values())
    tasks = [(k, groups[k], a.window_secs, cfg) for k in sorted(groups)]
    nw = _workers(len(tasks))
    if nw > 1:
        with ProcessPoolExecutor(nw) as pool:
            results = list(pool.map(_detect_task, tasks))
    else:
        results = [_detect_task(t) for t in tasks]
    elapsed = time.perf_counter() - t0

    reports = {}
    for key, res, _ in results:
        rep = res.report
        reports[key] = rep
        _write_atomic(out / "alerts" / f"{key[0]}_{key[1]}.json", rep.to_dict())
    summary = {
        "windows": len(results),
        "events": n_events,
        "validated_windows": sum(r.validated for r in reports.values()),
        "candidates": sum(r.n_candidates for r in reports.values()),
        "scored_count": sum(r.scored_count for r in reports.values()),
        "max_iterations": max((res.iterations for _, res, _ in results), default=0),
        "elapsed_seconds": elapsed,
        "window_seconds": [t for _, _, t in results],
        "throughput_events_per_minute": n_events / elapsed * 60 if elapsed > 0 else 0.0,
        "reference_throughput_events_per_minute": REFERENCE_THROUGHPUT,
        "mode": cfg.mode,
        "config": {"k": cfg.k, "max_len": cfg.max_len, "restart": cfg.restart, "window_secs": a.window_secs,
                   "normalize_on": cfg.target, "p_threshold": cfg.p_threshold,
                   "confidence_threshold": cfg.confidence_threshold},
    }
    labels = _labels_for(a)
    if labels is not None:
        hits = []
        val_hits = []
        for lab in labels:
            key = (lab["host"], lab["t_start"] // a.window_secs * a.window_secs)
            rep = reports.get(key)
            hit = rep is not None and label_hit(rep, lab["path"])
            hits.append(hit)
            val_hits.append(hit and rep.validated)
        summary["attacks"] = len(labels)
        summary["recall"] = float(np.mean(hits)) if hits else None
        summary["validated_recall"] = float(np.mean(val_hits)) if val_hits else None
    _write_atomic(out / "summary.json", summary)
    log.info("%d windows, %d validated, %.0f events/min", summary["windows"],
             summary["validated_windows"], summary["throughput_events_per_minute"])
    print(json.dumps({k: v for k, v in summary.items() if k != "window_seconds"}))
    return EXIT_ALERT if summary["validated_windows"] else EXIT_OK


def _qq_summary(values) -> dict:
    theo, emp = qq_points(values)
    r = float(np.corrcoef(theo, emp)[0, 1]) if len(theo) > 2 and np.std(emp) > 0 else float("nan")
    return {"n": int(len(theo)), "skewness": skewness(values) if len(theo) > 2 else 0.0,
            "qq_correlation": r, "theoretical": theo.tolist(), "sample": emp.tolist()}


def _qq_window(g, cfg: DetectConfig) -> dict:
    a, state = random_walk(g, cfg.restart, cfg.tol, cfg.max_iter, cfg.strict_blocks)
    cands = find_candidates(g, cfg.patterns, cfg.max_len, strict_chain=cfg.strict_chain, max_span=cfg.max_span)
    lns = log_normality(cands.paths, state, a)
    out = {}
    for r, pos in sorted(cands.by_length().items()):
        lq = to_log_target(lns[pos], cfg.target)
        fin = lq[np.isfinite(lq)]
        st = fit_group(r, fin)
        after = apply_group(st, fin, -np.expm1(lns[pos][np.isfinite(lq)]))
        out[str(r)] = {**st.row(), "before": _qq_summary(np.exp(fin)), "after": _qq_summary(after)}
    return out


def _nan_free(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _nan_free(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_nan_free(v) for v in x]
    return x


def run_qq(a) -> int:
    cfg = _config_from_args(a)
    groups = _load_windows(a.input, a.window_secs)
    report = []
    for key in sorted(groups)[: a.max_windows]:
        g = build_graph(groups[key], TimeWindow(key[1], a.window_secs))
        report.append({"host": key[0], "window_start": key[1], "lengths": _qq_window(g, cfg)})
    _write_atomic(Path(a.out) / "qq.json", _nan_free(report))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["host", "window_start", "r", "lambda", "mu", "sigma", "n"])
    for win in report:
        for r, d in win["lengths"].items():
            w.writerow([win["host"], win["window_start"], r, d["lambda"], d["mu"], d["sigma"], d["n"]])
    _write_atomic(Path(a.out) / "groups.csv", buf.getvalue())
    print(json.dumps({"windows": len(report)}))
    return EXIT_OK


def run_benchmark(a) -> int:
    cfg = _config_from_args(a)
    groups = _load_windows(a.input, a.window_secs)
    rows = []
    t_all = {"exhaustive": 0.0, "optimized": 0.0}
    n_events = 0
    for key in sorted(groups):
        evs = groups[key]
        n_events += len(evs)
        t0 = time.perf_counter()
        g = build_graph(evs, TimeWindow(key[1], a.window_secs))
        a_mat, state = random_walk(g, cfg.restart, cfg.tol, cfg.max_iter, cfg.strict_blocks)
        cands = find_candidates(g, cfg.patterns, cfg.max_len, strict_chain=cfg.strict_chain,
                                max_span=cfg.max_span)
        shared = time.perf_counter() - t0
        if len(cands) == 0:
            rows.append({"host": key[0], "window_start": key[1], "candidates": 0, "scored_exhaustive": 0,
                         "scored_optimized": 0, "scored_ratio": 1.0, "seconds_exhaustive": shared,
                         "seconds_optimized": shared, "identical": True})
            continue
        t1 = time.perf_counter()
        ex = topk_exhaustive(cands, state, a_mat, cfg.k, target=cfg.target, fit_sample=cfg.fit_sample)
        t2 = time.perf_counter()
        op = topk_optimized(g, cfg.patterns, state, a_mat, cfg.k, cfg.max_len, candidates=cands,
                            target=cfg.target, fit_sample=cfg.fit_sample)
        t3 = time.perf_counter()
        t_all["exhaustive"] += shared + t2 - t1
        t_all["optimized"] += shared + t3 - t2
        rows.append({"host": key[0], "window_start": key[1], "candidates": len(cands),
                     "scored_exhaustive": ex.scored_count, "scored_optimized": op.scored_count,
                     "scored_ratio": op.scored_count / ex.scored_count,
                     "seconds_exhaustive": shared + t2 - t1, "seconds_optimized": shared + t3 - t2,
                     "identical": [p.path for p in ex.ranked] == [p.path for p in op.ranked]})
    qq = []
    for key in sorted(groups)[: a.max_windows]:
        g = build_graph(groups[key], TimeWindow(key[1], a.window_secs))
        qq.append({"host": key[0], "window_start": key[1], "lengths": _qq_window(g, cfg)})
    ratios = [r["scored_ratio"] for r in rows]
    summary = {
        "windows": len(rows),
        "events": n_events,
        "mean_scored_ratio": float(np.mean(ratios)) if ratios else 1.0,
        "all_identical": all(r["identical"] for r in rows),
        "seconds": t_all,
        "throughput_events_per_minute": {m: (n_events / t * 60 if t > 0 else 0.0) for m, t in t_all.items()},
        "reference_throughput_events_per_minute": REFERENCE_THROUGHPUT,
    }
    _write_atomic(Path(a.out) / "benchmark.json", _nan_free({"summary": summary, "windows": rows, "qq": qq}))
    print(json.dumps(summary))
    return EXIT_OK


def run_generate(a) -> int:
    cfg = TraceConfig(hosts=a.hosts, hours=a.hours, seed=a.seed)
    if a.events_per_hour:
        cfg.scaled(a.events_per_hour)
    if a.attacks_per_type:
        cfg.with_default_attacks(a.attacks_per_type)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    n_ev, n_lab = write_trace(cfg, out / "events.jsonl", out / "labels.jsonl")
    print(json.dumps({"events": n_ev, "attacks": n_lab, "out": str(out)}))
    return EXIT_OK


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gid", description="Graph-based intrusion detection over event logs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace and its attack labels")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--hosts", type=_positive_int, default=10)
    g.add_argument("--hours", type=_positive_int, default=6)
    g.add_argument("--attacks-per-type", type=int, default=10)
    g.add_argument("--events-per-hour", type=float, default=None,
                   help="rescale background rates to this many events per host-hour")
    g.set_defaults(func=run_generate)

    for name, func, helptext in (("detect", run_detect, "detect suspicious paths per window"),
                                 ("benchmark", run_benchmark, "time both modes and collect q-q data"),
                                 ("qq", run_qq, "per-length q-q data before and after normalisation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--input", required=True, help="event log (JSON lines)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--window-secs", type=_positive_int, default=3600)
        s.add_argument("--k", type=_positive_int, default=10)
        s.add_argument("--max-len", type=int, default=5)
        s.add_argument("--restart", type=float, default=0.6)
        s.add_argument("--mode", choices=MODES, default="optimized")
        s.add_argument("--patterns", default=None, help="file with one pattern per line, e.g. F,P,I")
        s.add_argument("--normalize-on", choices=TARGETS, default="neglogns")
        s.add_argument("--seed", type=int, default=0, help="accepted for symmetry; detection is deterministic")
        s.add_argument("--p-threshold", type=float, default=0.05)
        s.add_argument("--confidence-threshold", type=float, default=0.9)
        s.add_argument("--max-span", type=int, default=None, help="max seconds between first and last hop")
        s.add_argument("--strict-blocks", action="store_true", help="drop process->process transitions")
        s.add_argument("--strict-chain", action="store_true", help="require one non-decreasing time chain")
        s.add_argument("--labels", default=None, help="attack labels for recall (default: labels.jsonl next to input)")
        s.add_argument("--max-windows", type=int, default=5, help="windows included in q-q data")
        s.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (OSError, EventLogError, GraphError, ConvergenceError, ValueError) as exc:
        print(f"gid: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
