"""Workload traces: data model and the line-oriented text format.

File layout::

    pool <pages>
    # name <name>          optional, preserved across round trips
    # seed <seed>          optional, preserved across round trips
    # anything else        ignored
    mmap <len>
    access <region> <offset> <len>
    munmap <region> <offset> <len>

Regions are ordinals of the mmap events in order of appearance, counted
from 0.  Offsets and lengths are in pages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import TraceError


@dataclass(frozen=True, slots=True)
class Mmap:
    len: int


@dataclass(frozen=True, slots=True)
class Munmap:
    region: int
    offset: int
    len: int


@dataclass(frozen=True, slots=True)
class Access:
    region: int
    offset: int
    len: int


TraceEvent = Union[Mmap, Munmap, Access]


@dataclass
class Trace:
    pool_size: int
    events: list = field(default_factory=list)
    name: str = ""
    seed: int | None = None

    def validate(self) -> None:
        """Check region references and bounds; raise :class:`TraceError`."""
        if self.pool_size < 1:
            raise TraceError(f"pool size must be >= 1, got {self.pool_size}")
        sizes: list[int] = []
        for i, ev in enumerate(self.events):
            _check_event(ev, sizes, f"event {i}")

    @property
    def mmap_pages(self) -> int:
        return sum(ev.len for ev in self.events if type(ev) is Mmap)

    @property
    def access_pages(self) -> int:
        return sum(ev.len for ev in self.events if type(ev) is Access)


def _check_event(ev, sizes: list[int], where: str, line: int | None = None) -> None:
    if ev.len < 1:
        raise TraceError(f"{where}: length must be >= 1", line)
    if type(ev) is Mmap:
        sizes.append(ev.len)
        return
    if ev.region >= len(sizes):
        raise TraceError(
            f"{where}: region {ev.region} referenced before its mmap "
            f"({len(sizes)} mmaps so far)", line)
    if ev.offset < 0 or ev.offset + ev.len > sizes[ev.region]:
        raise TraceError(
            f"{where}: range +{ev.offset}:{ev.len} outside region {ev.region} "
            f"of {sizes[ev.region]} pages", line)


def _int(tok: str, lineno: int) -> int:
    if not tok.isdigit():
        raise TraceError(f"expected a non-negative decimal integer, got {tok!r}", lineno)
    return int(tok)


def parse(text: str) -> Trace:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceError("empty trace: expected 'pool <pages>'", 1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != "pool":
        raise TraceError(f"expected 'pool <pages>', got {lines[0]!r}", 1)
    trace = Trace(pool_size=_int(head[1], 1))
    if trace.pool_size < 1:
        raise TraceError("pool size must be >= 1", 1)
    events = trace.events
    sizes: list[int] = []
    for lineno, line in enumerate(lines[1:], 2):
        if line.startswith("#"):
            meta = line[1:].split(None, 1)
            if len(meta) == 2 and meta[0] == "name":
                trace.name = meta[1].strip()
            elif len(meta) == 2 and meta[0] == "seed":
                trace.seed = int(meta[1]) if meta[1].strip().lstrip("-").isdigit() else None
            continue
        parts = line.split(" ")
        op = parts[0]
        if op == "mmap" and len(parts) == 2:
            ev = Mmap(_int(parts[1], lineno))
        elif op in ("access", "munmap") and len(parts) == 4:
            a, b, c = (_int(t, lineno) for t in parts[1:])
            ev = Access(a, b, c) if op == "access" else Munmap(a, b, c)
        elif not line.strip():
            continue
        else:
            raise TraceError(f"malformed event {line!r}", lineno)
        _check_event(ev, sizes, f"event {len(events)}", lineno)
        events.append(ev)
    return trace


def serialize(trace: Trace) -> str:
    out = [f"pool {trace.pool_size}\n"]
    if trace.name:
        out.append(f"# name {trace.name}\n")
    if trace.seed is not None:
        out.append(f"# seed {trace.seed}\n")
    for ev in trace.events:
        t = type(ev)
        if t is Access:
            out.append(f"access {ev.region} {ev.offset} {ev.len}\n")
        elif t is Mmap:
            out.append(f"mmap {ev.len}\n")
        else:
            out.append(f"munmap {ev.region} {ev.offset} {ev.len}\n")
    return "".join(out)


def load(path: str | Path) -> Trace:
    return parse(Path(path).read_text())


def dump(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(serialize(trace))
