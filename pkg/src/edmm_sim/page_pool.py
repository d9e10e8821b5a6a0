"""Virtual page pool of an enclave.

The pool is a fixed range of ``pool_size`` virtual pages.  It hands out
regions (one per logical mmap) and tracks two independent things:

* ownership: which live region, if any, currently holds each page.  Pages
  not held by a live region form the free index, a set of maximal runs.
* page state: where each page is in the EDMM protocol.  The pool stores the
  states but never decides them; the strategy layer drives every transition
  through :meth:`PagePool.set_state` and :meth:`PagePool.cache`.

Cached pages (freed but still mapped, kept for reuse) are additionally
indexed by run, for best-fit reuse, and by free order, for FIFO eviction.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, NamedTuple

from sortedcontainers import SortedDict

from .errors import InvalidArgument, OutOfSpace, ProtocolViolation

PAGE_SIZE = 4096


class PageState(IntEnum):
    UNMAPPED = 0
    MAPPED = 1
    ALLOCATED = 2
    CACHED = 3
    TRIM_PENDING = 4


_S = PageState
LEGAL_TRANSITIONS = frozenset({
    (_S.UNMAPPED, _S.MAPPED),          # EAUG + EACCEPT
    (_S.UNMAPPED, _S.ALLOCATED),       # logical grant under demand strategies
    (_S.MAPPED, _S.ALLOCATED),         # handed to a region
    (_S.MAPPED, _S.TRIM_PENDING),
    (_S.ALLOCATED, _S.MAPPED),         # pinned page returned to the pool
    (_S.ALLOCATED, _S.CACHED),         # lazy free
    (_S.ALLOCATED, _S.TRIM_PENDING),   # removal
    (_S.CACHED, _S.ALLOCATED),         # reuse
    (_S.CACHED, _S.TRIM_PENDING),      # eviction
    (_S.TRIM_PENDING, _S.UNMAPPED),    # EREMOVE
})
del _S


@dataclass(frozen=True)
class Region:
    """One logical mmap grant.

    ``start`` and ``len`` describe the original extent.  Partial releases
    leave the handle in place; the live remainder pieces are available from
    :meth:`PagePool.pieces`.
    """

    handle: int
    start: int
    len: int

    @property
    def end(self) -> int:
        return self.start + self.len


class PoolCounts(NamedTuple):
    mapped: int
    allocated: int
    cached: int
    unmapped: int
    trim_pending: int


class RunSet:
    """Maximal, non-overlapping ``[start, start+len)`` runs, kept coalesced."""

    def __init__(self) -> None:
        self._runs: SortedDict = SortedDict()
        self.total = 0

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._runs.items())

    def __len__(self) -> int:
        return len(self._runs)

    def runs(self) -> list[tuple[int, int]]:
        return list(self._runs.items())

    def add(self, start: int, n: int) -> None:
        if n <= 0:
            return
        runs = self._runs
        end = start + n
        i = runs.bisect_right(start)
        if i > 0:
            ps, pl = runs.peekitem(i - 1)
            if ps + pl > start:
                raise ValueError(f"run [{start},{end}) overlaps [{ps},{ps + pl})")
            if ps + pl == start:
                start = ps
                del runs[ps]
                i -= 1
        if i < len(runs):
            ns, nl = runs.peekitem(i)
            if ns < end:
                raise ValueError(f"run [{start},{end}) overlaps [{ns},{ns + nl})")
            if ns == end:
                end = ns + nl
                del runs[ns]
        runs[start] = end - start
        self.total += n

    def remove(self, start: int, n: int) -> None:
        """Remove a sub-range that lies entirely inside one run."""
        if n <= 0:
            return
        runs = self._runs
        i = runs.bisect_right(start) - 1
        if i < 0:
            raise ValueError(f"[{start},{start + n}) is not in the set")
        rs, rl = runs.peekitem(i)
        if start + n > rs + rl:
            raise ValueError(f"[{start},{start + n}) is not in the set")
        del runs[rs]
        if start > rs:
            runs[rs] = start - rs
        if start + n < rs + rl:
            runs[start + n] = rs + rl - start - n
        self.total -= n

    def first_fit(self, n: int) -> int | None:
        for start, length in self._runs.items():
            if length >= n:
                return start
        return None

    def best_fit(self, n: int) -> int | None:
        best = None
        best_len = 0
        for start, length in self._runs.items():
            if length >= n and (best is None or length < best_len):
                best, best_len = start, length
        return best


class PagePool:
    """Per-page state plus region and free-run bookkeeping."""

    def __init__(self, pool_size: int) -> None:
        if pool_size < 1:
            raise InvalidArgument(f"pool_size must be >= 1, got {pool_size}")
        self.pool_size = pool_size
        self.states = bytearray(pool_size)  # all PageState.UNMAPPED
        self.owner = [-1] * pool_size
        self.regions: dict[int, Region] = {}
        self.live_pages: dict[int, int] = {}
        self.free_index = RunSet()
        self.free_index.add(0, pool_size)
        self.cached_runs = RunSet()
        self.cached_fifo: OrderedDict[int, int] = OrderedDict()
        self._next_handle = 0

    # -- ownership ---------------------------------------------------------

    def reserve(self, n: int, prefer_cached: bool = False) -> Region:
        if n < 1:
            raise InvalidArgument(f"reservation length must be >= 1, got {n}")
        start = None
        if prefer_cached:
            start = self.cached_runs.best_fit(n)
        if start is None:
            start = self.free_index.first_fit(n)
        if start is None:
            raise OutOfSpace(f"no free run of {n} pages")
        self.free_index.remove(start, n)
        handle = self._next_handle
        self._next_handle += 1
        self.owner[start:start + n] = [handle] * n
        region = Region(handle, start, n)
        self.regions[handle] = region
        self.live_pages[handle] = n
        return region

    def is_live(self, region: Region) -> bool:
        return region.handle in self.live_pages

    def owns(self, region: Region, start: int, n: int) -> bool:
        """True if every page of ``[start, start+n)`` is held by ``region``."""
        live = self.live_pages.get(region.handle)
        if live is None or start < region.start or start + n > region.end:
            return False
        if live == region.len:
            return True
        return self.owner[start:start + n].count(region.handle) == n

    def release(self, region: Region, offset: int, n: int) -> list[tuple[int, int]]:
        """Return ``[offset, offset+n)`` of ``region`` to free space.

        Returns the released page runs in address order.
        """
        if n < 1 or offset < 0 or offset + n > region.len:
            raise InvalidArgument(
                f"range +{offset}:{n} outside region of {region.len} pages")
        start = region.start + offset
        if not self.owns(region, start, n):
            raise InvalidArgument(
                f"region {region.handle} does not hold pages [{start},{start + n})")
        self.owner[start:start + n] = [-1] * n
        self.free_index.add(start, n)
        left = self.live_pages[region.handle] - n
        if left:
            self.live_pages[region.handle] = left
        else:
            del self.live_pages[region.handle]
        return [(start, n)]

    def pieces(self, region: Region) -> list[tuple[int, int]]:
        """Live remainder runs of a region, in address order."""
        if region.handle not in self.live_pages:
            return []
        out: list[tuple[int, int]] = []
        owner = self.owner
        h = region.handle
        p = region.start
        while p < region.end:
            if owner[p] == h:
                q = p
                while q < region.end and owner[q] == h:
                    q += 1
                out.append((p, q - p))
                p = q
            else:
                p += 1
        return out

    # -- page state ----------------------------------------------------------

    def set_state(self, start: int, n: int, new: PageState) -> None:
        """Move ``[start, start+n)`` to ``new``, checking transition legality.

        Use :meth:`cache` to enter the Cached state.
        """
        if n <= 0:
            return
        if new == PageState.CACHED:
            raise ValueError("use cache() to stamp pages with a free sequence")
        end = start + n
        states = self.states
        for old in set(states[start:end]):
            if old != new and (old, new) not in LEGAL_TRANSITIONS:
                raise ProtocolViolation(
                    f"illegal transition {PageState(old).name}->{new.name} "
                    f"in [{start},{end})")
        if PageState.CACHED in states[start:end]:
            self.forget_cached(start, n)
        states[start:end] = bytes([new]) * n

    def cache(self, start: int, n: int, seq: int) -> None:
        """Allocated -> Cached for ``[start, start+n)``, stamped with ``seq``."""
        end = start + n
        if self.states[start:end].count(PageState.ALLOCATED) != n:
            raise ProtocolViolation(f"only Allocated pages can be cached [{start},{end})")
        self.states[start:end] = bytes([PageState.CACHED]) * n
        self.cached_runs.add(start, n)
        fifo = self.cached_fifo
        for p in range(start, end):
            fifo[p] = seq

    def forget_cached(self, start: int, n: int) -> None:
        """Drop Cached pages of a range from the cache indexes.

        States are left alone; the caller is about to move them.
        """
        end = start + n
        states = self.states
        fifo = self.cached_fifo
        p = states.find(PageState.CACHED, start, end)
        while p != -1:
            q = p
            while q < end and states[q] == PageState.CACHED:
                del fifo[q]
                q += 1
            self.cached_runs.remove(p, q - p)
            p = states.find(PageState.CACHED, q, end)

    @property
    def cached_count(self) -> int:
        return len(self.cached_fifo)

    def counts(self) -> PoolCounts:
        s = self.states
        return PoolCounts(
            mapped=s.count(PageState.MAPPED),
            allocated=s.count(PageState.ALLOCATED),
            cached=s.count(PageState.CACHED),
            unmapped=s.count(PageState.UNMAPPED),
            trim_pending=s.count(PageState.TRIM_PENDING),
        )


def state_runs(states: bytearray, start: int, end: int) -> Iterator[tuple[int, int, int]]:
    """Yield ``(state, run_start, run_len)`` for maximal same-state runs."""
    seg = bytes(states[start:end])
    i = 0
    n = len(seg)
    while i < n:
        st = seg[i]
        rest = seg[i:]
        run = n - i - len(rest.lstrip(_BYTE[st]))
        yield st, start + i, run
        i += run


_BYTE = [bytes([v]) for v in range(256)]


def pool_init(pool_size: int) -> PagePool:
    return PagePool(pool_size)


def pool_reserve(pool: PagePool, n: int, prefer_cached: bool = False) -> Region:
    return pool.reserve(n, prefer_cached)


def pool_release(pool: PagePool, region: Region, offset: int, n: int) -> list[tuple[int, int]]:
    return pool.release(region, offset, n)


def pool_counts(pool: PagePool) -> PoolCounts:
    return pool.counts()
