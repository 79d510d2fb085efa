"""Path patterns: slot-by-slot templates over entity types or concrete entities."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .events import ALLOWED_PAIRS, Entity, EntityType, EventSequence

Slot = Union[EntityType, str]  # str slots name a concrete entity id


def _slot_types(slot: Slot) -> tuple[EntityType, ...]:
    return (slot,) if isinstance(slot, EntityType) else tuple(EntityType)


@dataclass(frozen=True)
class PathPattern:
    slots: tuple[Slot, ...]

    def __post_init__(self) -> None:
        if len(self.slots) < 2:
            raise ValueError("a path pattern needs at least two slots")
        for a, b in zip(self.slots, self.slots[1:]):
            if not any((ta, tb) in ALLOWED_PAIRS for ta in _slot_types(a) for tb in _slot_types(b)):
                raise ValueError(f"no allowed interaction between slots {a} and {b}")

    def __len__(self) -> int:
        return len(self.slots)

    def __str__(self) -> str:
        return ",".join(s.value if isinstance(s, EntityType) else f"id:{s}" for s in self.slots)

    @classmethod
    def parse(cls, text: str) -> "PathPattern":
        slots: list[Slot] = []
        for tok in text.split(","):
            tok = tok.strip()
            if tok.startswith("id:"):
                slots.append(tok[3:])
            else:
                try:
                    slots.append(EntityType(tok))
                except ValueError:
                    raise ValueError(f"bad pattern slot {tok!r}") from None
        return cls(tuple(slots))

    @property
    def is_typed(self) -> bool:
        return all(isinstance(s, EntityType) for s in self.slots)


def slot_matches(entity: Entity, slot: Slot) -> bool:
    if isinstance(slot, EntityType):
        return entity.etype is slot
    return entity.id == slot


def is_consistent(p: EventSequence | Sequence[Entity], b: PathPattern) -> bool:
    nodes = p.nodes if isinstance(p, EventSequence) else p
    return len(nodes) == len(b.slots) and all(slot_matches(n, s) for n, s in zip(nodes, b.slots))


def load_patterns(path: str | Path) -> list[PathPattern]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(PathPattern.parse(line))
    return out


def type_strings(max_len: int, endpoints: tuple[EntityType, EntityType] | None = None):
    """All well-formed type-wildcard patterns of length 2..max_len.

    Walks the allowed-interaction automaton so ill-formed strings are never
    produced.
    """
    succ = {t: [d for d in EntityType if (t, d) in ALLOWED_PAIRS] for t in EntityType}
    level = [(t,) for t in EntityType if endpoints is None or t is endpoints[0]]
    for length in range(2, max_len + 1):
        level = [s + (d,) for s in level for d in succ[s[-1]]]
        for s in level:
            if endpoints is None or s[-1] is endpoints[1]:
                yield s


def enumerate_valid_patterns(g, max_len: int,
                             endpoint_constraint: tuple[EntityType, EntityType] | None = None,
                             **search_opts) -> list[PathPattern]:
    """Type-wildcard patterns witnessed by at least one time-ordered path in ``g``."""
    from .search import iter_paths

    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    present = {t: False for t in EntityType}
    for v in g.vertices:
        present[v.etype] = True
    out = []
    for s in type_strings(max_len, endpoint_constraint):
        if not all(present[t] for t in s):
            continue
        pat = PathPattern(s)
        if next(iter_paths(g, [pat], len(s), **search_opts), None) is not None:
            out.append(pat)
    return out

