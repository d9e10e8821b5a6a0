"""Enclave memory manager over the page pool and the EDMM flows.

A :class:`Manager` serves mmap, munmap and access requests under one
point of the strategy grid:

* ``static``        every pool page is added and measured at launch
* ``edmm``          pages are EAUG'd and accepted when mmap hands them out
* ``edmm+demand``   pages are EAUG'd on first touch by a demand fault

with the modifiers ``+pre`` (pages mapped at launch), ``+batch`` (one
madvise round trip per mmap'd run), ``+demand=N`` (map up to N pages per
demand fault) and ``+lf`` (cache freed pages up to a fraction of the pool).

Pages mapped at launch are pinned: freeing them returns them to the pool
still mapped and never triggers removal.  That is what makes ``static``
and a full pre-allocation behave identically.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import islice

from .errors import InvalidArgument, OutOfMemory, OutOfSpace, ProtocolViolation, UseAfterFree
from .flows import (
    Counters,
    EventLog,
    flow_batch_alloc,
    flow_demand,
    flow_eager_accept,
    flow_load,
    flow_remove,
)
from .page_pool import PAGE_SIZE, PagePool, PageState, Region, state_runs

_UNMAPPED = PageState.UNMAPPED
_MAPPED = PageState.MAPPED
_ALLOCATED = PageState.ALLOCATED
_CACHED = PageState.CACHED
_ALLOCATED_B = bytes([PageState.ALLOCATED])
_ZERO = b"\x00"


class Mode(Enum):
    STATIC = "static"
    EDMM = "edmm"
    EDMM_DEMAND = "edmm+demand"


@dataclass(frozen=True)
class StrategyConfig:
    mode: Mode = Mode.EDMM
    prealloc_pages: int = 0
    batch: bool = False
    demand_n: int = 1
    lazy_free_fraction: Fraction = Fraction(0)
    binary_pages: int = 0
    enclave_threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "lazy_free_fraction", Fraction(self.lazy_free_fraction))
        if self.demand_n < 1:
            raise InvalidArgument(f"demand_n must be >= 1, got {self.demand_n}")
        if not 0 <= self.lazy_free_fraction <= 1:
            raise InvalidArgument(
                f"lazy_free_fraction must be in [0, 1], got {self.lazy_free_fraction}")
        if self.prealloc_pages < 0 or self.binary_pages < 0:
            raise InvalidArgument("page counts must be >= 0")
        if self.enclave_threads < 1:
            raise InvalidArgument(f"enclave_threads must be >= 1, got {self.enclave_threads}")

    def validate_for(self, pool_size: int) -> None:
        if pool_size < 1:
            raise InvalidArgument(f"pool_size must be >= 1, got {pool_size}")
        if self.mode is Mode.STATIC:
            if self.binary_pages > pool_size:
                raise InvalidArgument(
                    f"binary_pages {self.binary_pages} exceeds pool of {pool_size}")
        elif self.binary_pages + self.prealloc_pages > pool_size:
            raise InvalidArgument(
                f"binary_pages + prealloc_pages = {self.binary_pages + self.prealloc_pages}"
                f" exceeds pool of {pool_size}")

    @property
    def label(self) -> str:
        return format_label(self)

    @classmethod
    def from_label(cls, label: str, **fields) -> "StrategyConfig":
        return parse_label(label, **fields)


# -- labels ------------------------------------------------------------------

_SUFFIX = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
_SIZE_RE = re.compile(r"^\s*(\d+)\s*([KMG]?)(?:i?B)?\s*$", re.IGNORECASE)


def parse_size(text: str) -> int:
    """Byte size with optional K/M/G suffix, rounded up to whole pages."""
    m = _SIZE_RE.match(str(text))
    if not m:
        raise InvalidArgument(f"bad size {text!r}")
    nbytes = int(m.group(1)) * _SUFFIX[m.group(2).upper()]
    return -(-nbytes // PAGE_SIZE)


def format_size(pages: int) -> str:
    nbytes = pages * PAGE_SIZE
    for suffix in ("G", "M", "K"):
        unit = _SUFFIX[suffix]
        if nbytes and nbytes % unit == 0:
            return f"{nbytes // unit}{suffix}"
    return str(nbytes)


def parse_percent(text: str) -> Fraction:
    text = text.strip().rstrip("%")
    try:
        value = Fraction(text) / 100
    except (ValueError, ZeroDivisionError):
        raise InvalidArgument(f"bad percentage {text!r}") from None
    return value


def _format_percent(frac: Fraction) -> str:
    pct = frac * 100
    if pct.denominator == 1:
        return str(pct.numerator)
    return f"{float(pct):g}"


def parse_label(label: str, **fields) -> StrategyConfig:
    """Parse ``static``, ``edmm``, ``edmm+demand`` plus modifiers.

    ``fields`` supplies the knobs a label cannot express (binary_pages,
    enclave_threads).
    """
    parts = label.strip().split("+")
    base = parts[0]
    rest = parts[1:]
    if base not in ("static", "edmm"):
        raise InvalidArgument(f"unknown strategy {label!r}")
    mode = Mode.STATIC if base == "static" else Mode.EDMM
    knobs: dict = {}
    for part in rest:
        key, _, value = part.partition("=")
        if base == "static" and key != "pre":
            raise InvalidArgument(f"modifier +{part} does not apply to static")
        if key == "demand":
            mode = Mode.EDMM_DEMAND
            knobs["demand_n"] = int(value) if value else 1
        elif key == "pre" and value:
            knobs["prealloc_pages"] = parse_size(value)
        elif key == "batch" and not value:
            knobs["batch"] = True
        elif key == "lf" and value:
            knobs["lazy_free_fraction"] = parse_percent(value)
        else:
            raise InvalidArgument(f"bad modifier +{part} in {label!r}")
    knobs.update(fields)
    return StrategyConfig(mode=mode, **knobs)


def format_label(cfg: StrategyConfig) -> str:
    if cfg.mode is Mode.STATIC:
        return "static"
    out = "edmm"
    if cfg.prealloc_pages:
        out += f"+pre={format_size(cfg.prealloc_pages)}"
    if cfg.batch:
        out += "+batch"
    if cfg.mode is Mode.EDMM_DEMAND:
        out += "+demand" if cfg.demand_n == 1 else f"+demand={cfg.demand_n}"
    if cfg.lazy_free_fraction:
        out += f"+lf={_format_percent(cfg.lazy_free_fraction)}"
    return out


# -- manager -----------------------------------------------------------------

@dataclass(frozen=True)
class Report:
    counters: Counters
    load_counters: Counters
    peak_mapped: int

    @property
    def reused_cached_pages(self) -> int:
        return self.counters.reused_cached_pages

    @property
    def posix_warnings(self) -> int:
        return self.counters.posix_warnings


class Manager:
    """Single-threaded enclave memory manager for one simulation."""

    def __init__(self, config: StrategyConfig, pool_size: int, record: bool = False) -> None:
        config.validate_for(pool_size)
        self.config = config
        self.pool = PagePool(pool_size)
        self.counters = Counters()
        self.load_counters = Counters()
        self.log: EventLog | None = EventLog() if record else None
        self.pinned = bytearray(pool_size)
        self.free_sequence = 0
        self.mapped_pages = 0
        self.peak_mapped = 0
        self._demand = config.mode is Mode.EDMM_DEMAND
        self._lazy = config.lazy_free_fraction > 0
        self._cache_limit = math.floor(config.lazy_free_fraction * pool_size)
        self.binary_region: Region | None = None
        self._load()

    def _load(self) -> None:
        cfg = self.config
        if cfg.mode is Mode.STATIC:
            measured = self.pool.pool_size
        else:
            measured = cfg.binary_pages + cfg.prealloc_pages
        load_log = flow_load(measured)
        self.load_counters.absorb(load_log)
        if self.log is not None:
            self.log.extend(load_log)
        self.pool.states[0:measured] = bytes([_MAPPED]) * measured
        self.pinned[0:measured] = b"\x01" * measured
        self._mapped(measured)
        if cfg.binary_pages:
            self.binary_region = self.pool.reserve(cfg.binary_pages)
            self.pool.set_state(0, cfg.binary_pages, _ALLOCATED)

    def _sink(self):
        return self.counters if self.log is None else EventLog()

    def _absorb(self, log) -> None:
        if log is not self.counters:
            self.counters.absorb(log)
            self.log.extend(log)

    def _mapped(self, n: int) -> None:
        self.mapped_pages += n
        if self.mapped_pages > self.peak_mapped:
            self.peak_mapped = self.mapped_pages

    def _remove(self, start: int, n: int) -> None:
        self._absorb(flow_remove(self.pool.states, start, n, self.config.enclave_threads,
                                 self._sink()))
        self.mapped_pages -= n

    # -- mmap --------------------------------------------------------------

    def mmap(self, n: int) -> Region:
        pool = self.pool
        try:
            region = pool.reserve(n, self._lazy)
        except OutOfSpace as exc:
            if not pool.cached_count:
                raise OutOfMemory(str(exc)) from None
            self._flush_cache()
            try:
                region = pool.reserve(n, self._lazy)
            except OutOfSpace as exc2:
                raise OutOfMemory(f"{exc2} after flushing the free-page cache") from None
        self._populate(region.start, n)
        return region

    def _populate(self, start: int, n: int) -> None:
        pool = self.pool
        states = pool.states
        for st, s, k in state_runs(states, start, start + n):
            if st == _CACHED:
                pool.set_state(s, k, _ALLOCATED)
                self.counters.reused_cached_pages += k
            elif st == _MAPPED:
                states[s:s + k] = _ALLOCATED_B * k
            elif st == _UNMAPPED:
                if self._demand:
                    continue
                if self.config.mode is Mode.STATIC:
                    raise ProtocolViolation(f"unmapped page {s} in a static pool")
                if self.config.batch:
                    self._absorb(flow_batch_alloc(states, s, k, self._sink()))
                else:
                    self._absorb(flow_eager_accept(states, s, k, self._sink()))
                states[s:s + k] = _ALLOCATED_B * k
                self._mapped(k)
            else:
                raise ProtocolViolation(
                    f"free page {s} in state {PageState(st).name}")

    def _flush_cache(self) -> None:
        pool = self.pool
        for s, k in pool.cached_runs.runs():
            pool.forget_cached(s, k)
            self._remove(s, k)

    # -- munmap ------------------------------------------------------------

    def munmap(self, region: Region, offset: int, n: int) -> None:
        pool = self.pool
        start = self._check_range(region, offset, n)
        if not pool.owns(region, start, n):
            raise InvalidArgument(
                f"munmap of pages [{start},{start + n}) not held by region {region.handle}")
        states = pool.states
        removable: list[tuple[int, int]] = []
        for st, s, k in state_runs(states, start, start + n):
            if st == _ALLOCATED:
                for pin, ps, pk in state_runs(self.pinned, s, s + k):
                    if pin:
                        states[ps:ps + pk] = bytes([_MAPPED]) * pk
                    else:
                        removable.append((ps, pk))
            elif st != _UNMAPPED:
                raise ProtocolViolation(
                    f"region page {s} in state {PageState(st).name}")
        if self._lazy:
            pool.release(region, offset, n)
            seq = self.free_sequence
            self.free_sequence += 1
            for s, k in removable:
                pool.cache(s, k, seq)
            self._evict_over_limit()
        else:
            for s, k in removable:
                self._remove(s, k)
            pool.release(region, offset, n)

    def _evict_over_limit(self) -> None:
        pool = self.pool
        excess = pool.cached_count - self._cache_limit
        if excess <= 0:
            return
        victims = sorted(islice(pool.cached_fifo, excess))
        run_start = prev = victims[0]
        for p in victims[1:]:
            if p != prev + 1:
                self._evict_run(run_start, prev + 1 - run_start)
                run_start = p
            prev = p
        self._evict_run(run_start, prev + 1 - run_start)

    def _evict_run(self, start: int, n: int) -> None:
        self.pool.forget_cached(start, n)
        self._remove(start, n)

    # -- access ------------------------------------------------------------

    def access(self, region: Region, offset: int, n: int) -> None:
        pool = self.pool
        if n < 1 or offset < 0 or offset + n > region.len:
            self._check_range(region, offset, n)
        start = region.start + offset
        end = start + n
        live = pool.live_pages.get(region.handle)
        if live == region.len or (live is not None and pool.owns(region, start, n)):
            if self._demand and pool.states.find(_ZERO, start, end) != -1:
                self._fault_in(region, start, end)
            self.counters.touched_pages += n
            return
        # Stale access: pages that stayed mapped (cached, pinned, or reused
        # by another mapping) still answer on hardware; unmapped ones fault.
        owner = pool.owner
        states = pool.states
        h = region.handle
        for p in range(start, end):
            if owner[p] != h and states[p] == _UNMAPPED:
                raise UseAfterFree(
                    f"access to unmapped page {p} of freed region {region.handle}")
        self.counters.posix_warnings += 1
        if self._demand:
            p = start
            while p < end:
                if owner[p] == h:
                    q = p
                    while q < end and owner[q] == h:
                        q += 1
                    self._fault_in(region, p, q)
                    p = q
                else:
                    p += 1
        self.counters.touched_pages += n

    def _fault_in(self, region: Region, start: int, end: int) -> None:
        pool = self.pool
        states = pool.states
        p = states.find(_ZERO, start, end)
        if p == -1:
            return
        n_dem = self.config.demand_n
        whole = pool.live_pages.get(region.handle) == region.len
        owner = pool.owner
        h = region.handle
        while p != -1:
            if n_dem == 1:
                q = p + 1
            else:
                seg = states[p:min(p + n_dem, region.end)]
                q = p + len(seg) - len(seg.lstrip(_ZERO))
            if not whole and q > p + 1:
                r = p + 1
                while r < q and owner[r] == h:
                    r += 1
                q = r
            # [p, q) is known Unmapped and its final state is set just
            # below, so the flow skips its own state checks.
            self._absorb(flow_demand(None, p, n_dem, q, self._sink()))
            k = q - p
            states[p:q] = _ALLOCATED_B * k
            self._mapped(k)
            p = states.find(_ZERO, q, end)

    # -- misc --------------------------------------------------------------

    @staticmethod
    def _check_range(region: Region, offset: int, n: int) -> int:
        if n < 1 or offset < 0 or offset + n > region.len:
            raise InvalidArgument(
                f"range +{offset}:{n} outside region of {region.len} pages")
        return region.start + offset

    def report(self) -> Report:
        return Report(self.counters.copy(), self.load_counters.copy(), self.peak_mapped)


def mm_load(config: StrategyConfig, pool_size: int, record: bool = False) -> Manager:
    return Manager(config, pool_size, record)


def mm_mmap(mgr: Manager, n: int) -> Region:
    return mgr.mmap(n)


def mm_access(mgr: Manager, region: Region, offset: int, n: int) -> None:
    mgr.access(region, offset, n)


def mm_munmap(mgr: Manager, region: Region, offset: int, n: int) -> None:
    mgr.munmap(region, offset, n)


def mm_report(mgr: Manager) -> Report:
    return mgr.report()


__all__ = [
    "Manager", "Mode", "Report", "StrategyConfig", "format_label", "format_size",
    "mm_access", "mm_load", "mm_mmap", "mm_munmap", "mm_report", "parse_label",
    "parse_percent", "parse_size",
]
