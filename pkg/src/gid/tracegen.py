"""Synthetic multi-host process traces with labelled exfiltration attacks.

Background traffic follows per-host habits: every process has a fixed set of
files, sockets and peers it talks to, with heavy-tailed (Zipf) popularity,
plus a trickle of cold one-off file reads and a few periodic daemon loops.
Attacks reuse popular background entities but wire them together in ways
the background never does, and leave through a fresh INET socket.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import Entity, EntityType, Event, event_to_record, F, P, U, I

HOUR = 3600
DEFAULT_START = 1_699_999_200  # hour-aligned

# background events per host-hour, by interaction type
DEFAULT_RATES = {"FP": 1400.0, "PF": 500.0, "PP": 100.0, "PU": 250.0, "UP": 250.0,
                 "UU": 50.0, "PI": 150.0, "IP": 150.0}

SECRET_FILES = {1: "/selinux/mls", 2: "/etc/passwd", 3: "/home/user/Documents/secret.xls"}
ATTACK_PROCS = {1: "sshd", 2: "gvfsd-ftp", 3: "bash"}

_NAMED_PROCS = ["sshd", "bash", "vim", "gvfsd-ftp", "httpd", "cron", "exim", "python3", "systemd",
                "rsyslogd", "dbus-daemon", "NetworkManager", "gnome-shell", "firefox", "libreoffice",
                "logrotate", "sudo", "login", "setroubleshootd", "curl", "tar", "gzip", "ls", "cat",
                "grep", "make", "gcc", "java", "postgres", "nginx"]
_NAMED_READ = ["/etc/passwd", "/etc/hosts", "/etc/resolv.conf", "/etc/nsswitch.conf",
               "/etc/ld.so.cache", "/usr/lib/libc.so.6", "/usr/lib/libssl.so.3", "/usr/lib/libz.so.1",
               "/etc/localtime", "/etc/group", "/etc/ssh/sshd_config", "/etc/crontab",
               "/usr/share/zoneinfo/UTC", "/proc/meminfo", "/proc/stat"]
_NAMED_WRITE = ["/var/log/syslog", "/var/log/auth.log", "/var/log/httpd/access.log",
                "/var/log/cron.log", "/var/spool/exim/input", "/home/user/.bash_history",
                "/home/user/.viminfo"]
_BUSY = {"sshd": 6.0, "bash": 5.0, "httpd": 6.0, "systemd": 4.0, "rsyslogd": 4.0, "cron": 3.0,
         "dbus-daemon": 3.0, "firefox": 3.0, "exim": 2.0, "gnome-shell": 2.0, "curl": 2.0, "python3": 2.0, "tar": 1.5,
         "gzip": 1.5, "gvfsd-ftp": 2.5}


class TraceConfigError(ValueError):
    pass


@dataclass
class AttackSpec:
    attack_type: int
    host: str
    start: int
    length: int = 3
    path: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.attack_type not in (1, 2, 3):
            raise TraceConfigError(f"unknown attack type {self.attack_type}")
        if not 3 <= self.length <= 5:
            raise TraceConfigError("attack length must be 3..5")


@dataclass
class TraceConfig:
    hosts: int = 10
    hours: int = 6
    seed: int = 0
    start: int = DEFAULT_START
    rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    n_processes: int = 40
    n_files: int = 90
    n_udsockets: int = 14
    n_inetsockets: int = 2
    cold_fraction: float = 0.005
    min_habit_rate: float = 8.0
    zipf_s: float = 1.2
    attacks: list[AttackSpec] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.hosts < 1 or self.hours < 1:
            raise TraceConfigError("need at least one host and one hour")
        if any(v < 0 for v in self.rates.values()):
            raise TraceConfigError("rates must be non-negative")
        unknown = set(self.rates) - set(DEFAULT_RATES)
        if unknown:
            raise TraceConfigError(f"unknown interaction types {sorted(unknown)}")

    @property
    def host_names(self) -> list[str]:
        return [f"host{h:02d}" for h in range(self.hosts)]

    def scaled(self, total_per_hour: float) -> "TraceConfig":
        s = total_per_hour / sum(self.rates.values())
        self.rates = {k: v * s for k, v in self.rates.items()}
        return self

    def with_default_attacks(self, per_type: int = 10, rng_seed: int | None = None) -> "TraceConfig":
        """``per_type`` attacks of each type at random hosts and hours, lengths cycling 3, 4, 5."""
        rng = np.random.default_rng([self.seed if rng_seed is None else rng_seed, 7])
        hosts = self.host_names
        slots = [(h, hr) for h in range(self.hosts) for hr in range(self.hours)]
        order = rng.permutation(len(slots))
        k = 0
        for typ in (1, 2, 3):
            for i in range(per_type):
                h, hr = slots[order[k % len(slots)]]
                k += 1
                t0 = self.start + hr * HOUR + int(rng.integers(60, HOUR - 300))
                self.attacks.append(AttackSpec(typ, hosts[h], t0, 3 + i % 3))
        return self


def _zipf_weights(n: int, s: float, rng) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w[rng.permutation(n)]


class _HostModel:
    """Stable per-host habits: who talks to whom, and how often."""

    def __init__(self, cfg: TraceConfig, host: str, rng: np.random.Generator):
        self.host = host
        npro = max(cfg.n_processes, 8)
        procs = (_NAMED_PROCS + [f"proc-{i:02d}" for i in range(npro)])[:max(npro, 4)]
        for name in ATTACK_PROCS.values():
            if name not in procs:
                procs.append(name)
        nread = max(cfg.n_files * 2 // 3, len(_NAMED_READ) + 3)
        nwrite = max(cfg.n_files - nread, len(_NAMED_WRITE) + 2)
        reads = _NAMED_READ + [f"/usr/share/data/f{i:03d}" for i in range(nread - len(_NAMED_READ))]
        reads += [SECRET_FILES[1], SECRET_FILES[3]]
        writes = _NAMED_WRITE + [f"/var/tmp/t{i:03d}" for i in range(nwrite - len(_NAMED_WRITE))]
        uds = [f"uds:/run/sock{i:02d}" for i in range(max(cfg.n_udsockets, 2))]
        inets = [f"inet:10.0.0.{i + 2}:{443 if i == 0 else 22}" for i in range(max(cfg.n_inetsockets, 1))]

        ent = {}
        for names, typ in ((procs, P), (reads + writes, F), (uds, U), (inets, I)):
            for n in names:
                ent[n] = Entity(n, typ, host)
        self.ent = ent

        act = {n: _BUSY.get(n, 1.0) * rng.uniform(0.5, 1.5) for n in procs}
        fpop = _zipf_weights(len(reads), cfg.zipf_s, rng)
        fpop[reads.index("/etc/passwd")] = fpop.max()
        for secret in (SECRET_FILES[1], SECRET_FILES[3]):
            fpop[reads.index(secret)] = 0.0
        fpop /= fpop.sum()
        self.read_pop = (reads, fpop)

        edges: dict[str, dict[tuple[str, str], float]] = {k: {} for k in DEFAULT_RATES}
        reserved = {(SECRET_FILES[1], "sshd"), ("/etc/passwd", "gvfsd-ftp"), (SECRET_FILES[3], "bash")}

        def add(kind, a, b, w=1.0):
            if (a, b) not in reserved and a != b:
                edges[kind][(a, b)] = w * rng.uniform(0.5, 1.5)

        for p in procs:
            nr = int(min(2 + rng.zipf(1.8), 20))
            for c in rng.choice(len(reads), size=nr, replace=False, p=fpop):
                add("FP", reads[c], p, act[p])
            nw = int(rng.choice([1, 1, 2, 3]))
            for c in rng.choice(len(writes), size=nw, replace=False):
                add("PF", p, writes[c], act[p])
        # secrets are hot files with a single legitimate owner that reads them constantly
        for f, owner in ((SECRET_FILES[1], "setroubleshootd"), (SECRET_FILES[3], "libreoffice")):
            if owner in act:
                add("FP", f, owner, 25.0)
        # some written files are read back by another process (pipelines, log readers)
        for w in writes:
            if rng.random() < 0.35:
                reader = procs[int(rng.integers(len(procs)))]
                add("FP", w, reader, act[reader])
        # process -> process (fork / signal / pipe)
        for par in ("systemd", "sshd", "bash", "cron", "gnome-shell"):
            for c in rng.choice(len(procs), size=4, replace=False):
                add("PP", par, procs[c], act[par])
        # unix domain sockets: writers -> socket -> readers
        pw = np.array([act[n] for n in procs])
        for u in uds:
            a, b, c = (procs[i] for i in rng.choice(len(procs), size=3, replace=False, p=pw / pw.sum()))
            add("PU", a, u, act[a])
            add("UP", u, b, act[b])
            if rng.random() < 0.5:
                add("PU", c, u, act[c])
            else:
                add("UP", u, c, act[c])
        for _ in range(max(len(uds) // 4, 1)):
            a, b = rng.choice(len(uds), size=2, replace=False)
            add("UU", uds[a], uds[b])
        # long-lived network sockets of the network daemons
        owners = ["httpd", "sshd", "exim", "firefox"]
        for k, s in enumerate(inets):
            o = owners[k % len(owners)]
            add("PI", o, s)
            add("IP", s, o)
        # a source splits its activity over its habits, so busy entities have heavy
        # habitual edges rather than many light ones
        for es in edges.values():
            deg: dict[str, int] = {}
            for a, _ in es:
                deg[a] = deg.get(a, 0) + 1
            for key in es:
                es[key] /= deg[key[0]]
        self.edges = edges
        self.procs = procs
        self.uds = uds
        # daemons touching a file at a fixed period: (src, dst, seconds)
        self.periodic = [(a, b, sec) for a, b, sec in
                         (("/etc/crontab", "cron", 60), ("rsyslogd", "/var/log/syslog", 30),
                          ("/proc/stat", "systemd", 120)) if a in ent and b in ent]

    def hour(self, cfg: TraceConfig, t0: int, rng: np.random.Generator) -> list[Event]:
        ent = self.ent
        out: list[Event] = []
        budget = dict(cfg.rates)
        for a, b, period in self.periodic:
            kind = ent[a].etype.value + ent[b].etype.value
            # periodic loops may use at most a fifth of their interaction type's budget
            period = max(period, int(np.ceil(HOUR / max(0.2 * cfg.rates.get(kind, 0.0) / 2, 1e-9))))
            if period >= HOUR:
                continue
            phase = int(rng.integers(period))
            ts = range(t0 + phase, t0 + HOUR, period)
            out.extend(Event(ent[a], ent[b], t) for t in ts)
            budget[kind] -= len(ts)
        for kind, rate in budget.items():
            es = self.edges[kind]
            if not es or rate <= 0:
                continue
            if kind == "FP":
                cold = rate * cfg.cold_fraction
                rate -= cold
                reads, pop = self.read_pop
                for _ in range(rng.poisson(cold)):
                    f = reads[int(rng.choice(len(reads), p=pop))]
                    p = self.procs[int(rng.integers(len(self.procs)))]
                    if f in SECRET_FILES.values():
                        continue
                    out.append(Event(ent[f], ent[p], t0 + int(rng.integers(HOUR))))
            keys = list(es)
            w = np.array([es[k] for k in keys])
            lam = rate * w / w.sum()
            # habits recur: no habitual edge is expected fewer than min_habit_rate times an hour
            if cfg.min_habit_rate > 0 and lam.min() < cfg.min_habit_rate:
                lam = np.maximum(lam, cfg.min_habit_rate)
                lam *= rate / lam.sum()
            counts = rng.poisson(lam)
            for (a, b), c in zip(keys, counts):
                if c:
                    src, dst = ent[a], ent[b]
                    out.extend(Event(src, dst, t0 + int(t)) for t in rng.integers(HOUR, size=c))
        return out

    def attack(self, spec: AttackSpec, rng: np.random.Generator) -> list[Event]:
        ent = self.ent
        h = self.host
        secret = ent[SECRET_FILES[spec.attack_type]]
        proc = ent[ATTACK_PROCS[spec.attack_type]]
        port = int(rng.integers(20000, 60000))
        exfil = Entity(f"inet:10.0.0.2:{port}->198.51.100.{int(rng.integers(1, 255))}:443", I, h)
        chain = [secret, proc]
        if spec.length >= 4:
            relays = [p for p in ("curl", "python3", "tar", "gzip") if p in ent and p != proc.id]
            relays = relays or [p for p in self.procs if p != proc.id]
            relay = ent[relays[int(rng.integers(len(relays)))]]
            if spec.length == 5:
                # a socket this process does not normally write to
                fresh = [u for u in self.uds if (proc.id, u) not in self.edges["PU"]] or self.uds
                chain.append(ent[fresh[int(rng.integers(len(fresh)))]])
            chain.append(relay)
        chain.append(exfil)
        spec.path = [e.id for e in chain]
        t = spec.start
        out = []
        for a, b in zip(chain, chain[1:]):
            out.append(Event(a, b, t))
            t += int(rng.integers(1, 30))
        return out


def generate(cfg: TraceConfig) -> tuple[list[Event], list[dict]]:
    """Background plus injected attacks, sorted by time; returns (events, labels)."""
    hosts = cfg.host_names
    by_host: dict[str, list[AttackSpec]] = {h: [] for h in hosts}
    for a in cfg.attacks:
        if a.host not in by_host:
            raise TraceConfigError(f"attack on unknown host {a.host!r}")
        by_host[a.host].append(a)
    events: list[Event] = []
    labels: list[dict] = []
    for hi, host in enumerate(hosts):
        rng = np.random.default_rng([cfg.seed, hi])
        model = _HostModel(cfg, host, rng)
        for hr in range(cfg.hours):
            events.extend(model.hour(cfg, cfg.start + hr * HOUR, rng))
        for spec in sorted(by_host[host], key=lambda a: a.start):
            evs = model.attack(spec, rng)
            events.extend(evs)
            labels.append({"attack_type": spec.attack_type, "host": host, "path": spec.path,
                           "t_start": evs[0].t, "t_end": evs[-1].t})
    events.sort(key=lambda e: (e.t, e.host, e.src.id, e.dst.id))
    labels.sort(key=lambda d: (d["t_start"], d["host"]))
    return events, labels


def write_trace(cfg: TraceConfig, events_path: str | Path, labels_path: str | Path) -> tuple[int, int]:
    events, labels = generate(cfg)
    with open(events_path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(event_to_record(e) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for d in labels:
            fh.write(json.dumps(d) + "\n")
    return len(events), len(labels)


def read_labels(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
