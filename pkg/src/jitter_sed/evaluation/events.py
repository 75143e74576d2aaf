"""Event lists and their tab-separated file formats."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from ..errors import DataError

CLIP_DURATION = 10.0
HEADER = "clip_id\tonset\toffset\tclass"


class Event(NamedTuple):
    label: str
    onset: float
    offset: float

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class EventList:
    clip_id: str
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        for ev in self.events:
            validate_event(ev)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def labels(self) -> set[str]:
        return {ev.label for ev in self.events}

    def of_class(self, label: str) -> list[Event]:
        return [ev for ev in self.events if ev.label == label]


def validate_event(ev: Event, duration: float = CLIP_DURATION) -> None:
    if not (math.isfinite(ev.onset) and math.isfinite(ev.offset)):
        raise DataError(f"non-finite event bounds {ev}")
    if not ev.onset < ev.offset:
        raise DataError(f"event onset {ev.onset} not before offset {ev.offset} ({ev.label})")
    if ev.onset < 0 or ev.offset > duration + 1e-9:
        raise DataError(f"event {ev} outside [0, {duration}]")


def format_time(t: float) -> str:
    return f"{t:.3f}"


def write_events(path, lists: Iterable[EventList]) -> None:
    lines = [HEADER]
    for el in lists:
        for ev in sorted(el.events, key=lambda e: (e.onset, e.offset, e.label)):
            lines.append(f"{el.clip_id}\t{format_time(ev.onset)}\t{format_time(ev.offset)}\t{ev.label}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_events(path, clip_ids: Iterable[str] | None = None) -> dict[str, EventList]:
    """Parse a ``clip_id onset offset class`` file; clips in ``clip_ids`` with no rows get empty lists."""
    out: dict[str, EventList] = {}
    if clip_ids is not None:
        for cid in clip_ids:
            out[cid] = EventList(cid)
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("clip_id"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(parts)}")
        cid, on, off, label = parts
        try:
            ev = Event(label, float(on), float(off))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        validate_event(ev)
        out.setdefault(cid, EventList(cid)).events.append(ev)
    return out


def write_weak(path, labels: dict[str, set[str]]) -> None:
    lines = ["clip_id\tclasses"]
    for cid in sorted(labels):
        lines.append(f"{cid}\t{','.join(sorted(labels[cid]))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_weak(path) -> dict[str, set[str]]:
    out: dict[str, set[str]] = defaultdict(set)
    for line in Path(path).read_text().splitlines()[1:]:
        if not line.strip():
            continue
        cid, _, classes = line.partition("\t")
        out[cid] = {c for c in classes.split(",") if c}
    return dict(out)
