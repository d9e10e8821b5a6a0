"""Brute-force reference simulator for differential testing.

Deliberately naive and self-contained: per-page Python lists, event names
as strings, every reservation found by scanning the whole pool, every
protocol round spelled out as a literal event list.  It shares no code
with the page pool, flows or strategy modules, so agreement between the
two is evidence rather than tautology.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from enum import Enum
from fractions import Fraction

from .errors import InvalidArgument, OutOfMemory, ReplayError, UseAfterFree
from .trace import Access, Mmap, Trace



class OraclePageState(Enum):
    UNMAPPED = "unmapped"
    MAPPED = "mapped"
    ALLOCATED = "allocated"
    CACHED = "cached"
    TRIM_PENDING = "trim_pending"


UNMAPPED = OraclePageState.UNMAPPED
MAPPED = OraclePageState.MAPPED
ALLOCATED = OraclePageState.ALLOCATED
CACHED = OraclePageState.CACHED
TRIM_PENDING = OraclePageState.TRIM_PENDING

CROSSING_NAMES = ("eenter", "eexit", "aex", "eresume", "page_fault",
                  "syscall_enter", "syscall_return", "ipi")
ALL_NAMES = ("eenter", "eexit", "aex", "eresume", "page_fault", "syscall_enter",
             "syscall_return", "eaug", "eaccept", "etrack", "ipi", "trim",
             "eremove", "eadd_measure")


def add_page_flow() -> list[str]:
    # EACCEPT on an unmapped page faults out; the driver EAUGs; ERESUME
    # re-executes the EACCEPT.
    return ["aex", "page_fault", "eaug", "eresume", "eaccept"]


def demand_one_flow() -> list[str]:
    return ["aex", "page_fault", "eaug", "eenter", "eaccept", "eexit", "eresume"]


def demand_many_flow(k: int) -> list[str]:
    return (["aex", "page_fault", "eaug", "syscall_enter"] + ["eaug"] * (k - 1)
            + ["syscall_return", "eenter"] + ["eaccept"] * k + ["eexit", "eresume"])


def batch_flow(k: int) -> list[str]:
    return (["eexit", "syscall_enter"] + ["eaug"] * k + ["syscall_return", "eenter"]
            + ["eaccept"] * k)


def remove_flow(k: int, threads: int) -> list[str]:
    return (["eexit", "syscall_enter"] + ["trim"] * k + ["etrack"] + ["ipi"] * threads
            + ["syscall_return", "eenter"] + ["eaccept"] * k
            + ["eexit", "syscall_enter"] + ["eremove"] * k + ["syscall_return", "eenter"])


def _runs(pages: list[int]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for p in sorted(pages):
        if out and out[-1][0] + out[-1][1] == p:
            out[-1] = (out[-1][0], out[-1][1] + 1)
        else:
            out.append((p, 1))
    return out


class _Sim:
    def __init__(self, config, pool_size: int) -> None:
        mode = config.mode.value
        self.static = mode == "static"
        self.demand = mode == "edmm+demand"
        self.batch = bool(config.batch)
        self.n = config.demand_n
        self.threads = config.enclave_threads
        self.frac = Fraction(config.lazy_free_fraction)
        self.size = pool_size
        self.state = [UNMAPPED] * pool_size
        self.owner: list = [None] * pool_size
        self.pinned = [False] * pool_size
        # One byte per page: x held by a region, c free and cached, . free
        # otherwise.  Kept in step with owner and state.
        self.occ = bytearray(b"." * pool_size)
        self.cache_order: list[int] = []
        self.events: Counter = Counter()
        self.load_events: Counter = Counter()
        self.reused = 0
        self.warnings = 0
        self.touched = 0
        self.regions: list[tuple[int, int]] = []

        if self.static:
            measured = pool_size
        else:
            measured = config.binary_pages + config.prealloc_pages
        if measured > pool_size or config.binary_pages > pool_size:
            raise InvalidArgument("configuration does not fit the pool")
        self.load_events.update(["eadd_measure"] * measured)
        for p in range(measured):
            self.state[p] = MAPPED
            self.pinned[p] = True
        for p in range(config.binary_pages):
            self.owner[p] = "binary"
            self.occ[p] = ord("x")
            self.state[p] = ALLOCATED
        self.peak = self.backed()

    def backed(self) -> int:
        return self.size - self.state.count(UNMAPPED)

    def note_peak(self) -> None:
        self.peak = max(self.peak, self.backed())

    def find_run(self, n: int, prefer_cached: bool):
        occ = bytes(self.occ)
        if prefer_cached:
            best = None
            for m in re.finditer(rb"c+", occ):
                length = m.end() - m.start()
                if length >= n and (best is None or length < best[1]):
                    best = (m.start(), length)
            if best is not None:
                return best[0]
        start = occ.replace(b"c", b".").find(b"." * n)
        return None if start < 0 else start

    def remove(self, pages: list[int]) -> None:
        for start, k in _runs(pages):
            self.events.update(remove_flow(k, self.threads))
            for p in range(start, start + k):
                self.state[p] = TRIM_PENDING
                self.occ[p] = ord(".")
            for p in range(start, start + k):
                self.state[p] = UNMAPPED

    def mmap(self, n: int) -> None:
        lazy = self.frac > 0
        start = self.find_run(n, lazy)
        if start is None and self.cache_order:
            flushed = list(self.cache_order)
            self.cache_order.clear()
            self.remove(flushed)
            start = self.find_run(n, lazy)
        if start is None:
            raise OutOfMemory(f"no room for {n} pages")
        ordinal = len(self.regions)
        self.regions.append((start, n))
        fresh: list[int] = []
        for p in range(start, start + n):
            self.owner[p] = ordinal
            self.occ[p] = ord("x")
            st = self.state[p]
            if st == CACHED:
                self.cache_order.remove(p)
                self.state[p] = ALLOCATED
                self.reused += 1
            elif st == MAPPED:
                self.state[p] = ALLOCATED
            elif st == UNMAPPED and not self.demand:
                fresh.append(p)
        for run_start, k in _runs(fresh):
            if self.batch:
                self.events.update(batch_flow(k))
            else:
                for _ in range(k):
                    self.events.update(add_page_flow())
            for p in range(run_start, run_start + k):
                self.state[p] = ALLOCATED
        self.note_peak()

    def access(self, ordinal: int, offset: int, n: int) -> None:
        rstart, rlen = self.regions[ordinal]
        if offset + n > rlen:
            raise InvalidArgument("access outside region")
        pages = range(rstart + offset, rstart + offset + n)
        stale = [p for p in pages if self.owner[p] != ordinal]
        for p in stale:
            if self.state[p] == UNMAPPED:
                raise UseAfterFree(f"page {p} is gone")
        if stale:
            self.warnings += 1
        if self.demand:
            for p in pages:
                if self.owner[p] != ordinal or self.state[p] != UNMAPPED:
                    continue
                k = 0
                while (k < self.n and p + k < rstart + rlen
                       and self.owner[p + k] == ordinal
                       and self.state[p + k] == UNMAPPED):
                    k += 1
                self.events.update(demand_one_flow() if k == 1 else demand_many_flow(k))
                for q in range(p, p + k):
                    self.state[q] = ALLOCATED
            self.note_peak()
        self.touched += n

    def munmap(self, ordinal: int, offset: int, n: int) -> None:
        rstart, rlen = self.regions[ordinal]
        if offset + n > rlen:
            raise InvalidArgument("munmap outside region")
        pages = list(range(rstart + offset, rstart + offset + n))
        if any(self.owner[p] != ordinal for p in pages):
            raise InvalidArgument("munmap of pages the region does not hold")
        freed: list[int] = []
        for p in pages:
            self.owner[p] = None
            self.occ[p] = ord(".")
            if self.state[p] == ALLOCATED:
                if self.pinned[p]:
                    self.state[p] = MAPPED
                else:
                    freed.append(p)
        if self.frac > 0:
            for p in freed:
                self.state[p] = CACHED
                self.occ[p] = ord("c")
                self.cache_order.append(p)
            limit = math.floor(self.frac * self.size)
            if len(self.cache_order) > limit:
                excess = len(self.cache_order) - limit
                victims = self.cache_order[:excess]
                del self.cache_order[:excess]
                self.remove(victims)
        else:
            self.remove(freed)

    def result(self) -> dict[str, int]:
        out = {name: self.events[name] for name in ALL_NAMES}
        out["crossings"] = sum(self.events[name] for name in CROSSING_NAMES)
        out["reused_cached_pages"] = self.reused
        out["posix_warnings"] = self.warnings
        out["touched_pages"] = self.touched
        out["load_eadd_measure"] = self.load_events["eadd_measure"]
        out["peak_mapped"] = self.peak
        return out


def oracle_replay(trace: Trace, config) -> dict[str, int]:
    """Counters, load measurement and peak footprint of ``trace`` under ``config``.

    Keys match :meth:`Counters.as_dict` plus ``load_eadd_measure`` and
    ``peak_mapped``.  Failures raise :class:`ReplayError` with the index of
    the offending event.
    """
    sim = _Sim(config, trace.pool_size)
    for i, ev in enumerate(trace.events):
        try:
            if isinstance(ev, Mmap):
                sim.mmap(ev.len)
            elif isinstance(ev, Access):
                sim.access(ev.region, ev.offset, ev.len)
            else:
                sim.munmap(ev.region, ev.offset, ev.len)
        except (InvalidArgument, OutOfMemory, UseAfterFree) as exc:
            raise ReplayError(i, exc) from exc
    return sim.result()
