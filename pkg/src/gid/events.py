"""Entities, events, event sequences and tumbling windows.

Also the newline-delimited JSON event-log format::

    {"src": "p:vim", "stype": "P", "dst": "f:/etc/passwd", "dtype": "F", "t": 100, "host": "h1"}
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator


class EntityType(str, Enum):
    FILE = "F"
    PROCESS = "P"
    UDSOCKET = "U"
    INETSOCKET = "I"

    def __str__(self) -> str:
        return self.value


F, P, U, I = EntityType.FILE, EntityType.PROCESS, EntityType.UDSOCKET, EntityType.INETSOCKET

# Ordered (src, dst) type pairs that may form an event on a single host.
ALLOWED_PAIRS = frozenset({(P, F), (F, P), (P, P), (P, U), (U, P), (P, I), (I, P), (U, U)})


def is_allowed(stype: EntityType, dtype: EntityType) -> bool:
    return (stype, dtype) in ALLOWED_PAIRS


class EventLogError(ValueError):
    """Base class for problems with event records."""


class ParseError(EventLogError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(EventLogError):
    pass


@dataclass(frozen=True, slots=True)
class Entity:
    id: str
    etype: EntityType
    host: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.host, self.id)


@dataclass(frozen=True, slots=True)
class Event:
    src: Entity
    dst: Entity
    t: int

    def __post_init__(self) -> None:
        if self.src.key == self.dst.key:
            raise ValidationError(f"self-loop event on {self.src.id!r}")
        if not is_allowed(self.src.etype, self.dst.etype):
            raise ValidationError(f"disallowed interaction {self.src.etype}->{self.dst.etype}")
        if self.src.host != self.dst.host:
            raise ValidationError("event endpoints on different hosts")

    @property
    def host(self) -> str:
        return self.src.host


@dataclass(frozen=True, slots=True)
class EventSequence:
    """A chain of events n_1 -> n_2 -> ... -> n_l.

    ``timestamps[i]`` is the representative time of hop ``nodes[i] -> nodes[i+1]``.
    """

    nodes: tuple[Entity, ...]
    timestamps: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.nodes) < 2:
            raise ValueError("an event sequence needs at least two nodes")
        if len(self.timestamps) != len(self.nodes) - 1:
            raise ValueError("need exactly one timestamp per hop")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def events(self) -> list[Event]:
        return [Event(a, b, t) for a, b, t in zip(self.nodes, self.nodes[1:], self.timestamps)]

    @property
    def timespan(self) -> int:
        return max(self.timestamps) - min(self.timestamps)

    @property
    def is_time_ordered(self) -> bool:
        return all(a <= b for a, b in zip(self.timestamps, self.timestamps[1:]))


@dataclass(frozen=True, slots=True)
class TimeWindow:
    """Half-open interval [start, start + duration)."""

    start: int
    duration: int = 3600

    @property
    def end(self) -> int:
        return self.start + self.duration

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.end


def assign_window(e: Event | int, duration: int = 3600) -> TimeWindow:
    if duration <= 0:
        raise ValueError("window duration must be positive")
    t = e if isinstance(e, int) else e.t
    return TimeWindow((t // duration) * duration, duration)


class EntityRegistry:
    """Insert-if-absent store of entities keyed by (host, id)."""

    def __init__(self) -> None:
        self._entities: dict[tuple[str, str], Entity] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entities

    def get(self, host: str, id: str) -> Entity | None:
        return self._entities.get((host, id))

    def intern(self, host: str, id: str, etype: EntityType) -> Entity:
        key = (host, id)
        ent = self._entities.get(key)
        if ent is None:
            with self._lock:
                ent = self._entities.setdefault(key, Entity(id, etype, host))
        if ent.etype is not etype:
            raise ValidationError(f"entity {id!r} on {host!r} seen as both {ent.etype} and {etype}")
        return ent


_FIELDS = (("src", str), ("stype", str), ("dst", str), ("dtype", str), ("t", int), ("host", str))


def parse_event_record(line: str, registry: EntityRegistry | None = None,
                       lineno: int | None = None) -> Event:
    """Parse one JSON event record.

    Raises ParseError for malformed records and ValidationError for records
    that are well-formed but describe an impossible interaction.
    """
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", lineno)
    for name, kind in _FIELDS:
        if name not in rec:
            raise ParseError(f"missing field {name!r}", lineno)
        val = rec[name]
        if not isinstance(val, kind) or isinstance(val, bool):
            raise ParseError(f"field {name!r} must be {kind.__name__}", lineno)
    try:
        stype, dtype = EntityType(rec["stype"]), EntityType(rec["dtype"])
    except ValueError:
        raise ParseError(f"unknown entity type in {rec['stype']!r}/{rec['dtype']!r}", lineno) from None
    if not is_allowed(stype, dtype):
        raise ValidationError(f"disallowed interaction {stype}->{dtype}")
    host = rec["host"]
    if registry is None:
        src, dst = Entity(rec["src"], stype, host), Entity(rec["dst"], dtype, host)
    else:
        src, dst = registry.intern(host, rec["src"], stype), registry.intern(host, rec["dst"], dtype)
    return Event(src, dst, rec["t"])


def event_to_record(e: Event) -> str:
    return json.dumps({"src": e.src.id, "stype": e.src.etype.value, "dst": e.dst.id,
                       "dtype": e.dst.etype.value, "t": e.t, "host": e.host},
                      ensure_ascii=False)


def read_events(path: str | Path, registry: EntityRegistry | None = None) -> Iterator[Event]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield parse_event_record(line, registry, lineno)


def write_events(path: str | Path, events: Iterable[Event]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(event_to_record(e))
            fh.write("\n")
            n += 1
    return n


def group_by_window(events: Iterable[Event], duration: int = 3600) -> dict[tuple[str, int], list[Event]]:
    """Partition events into tumbling (host, window start) buckets."""
    groups: dict[tuple[str, int], list[Event]] = {}
    for e in events:
        start = (e.t // duration) * duration
        groups.setdefault((e.host, start), []).append(e)
    return groups
