"""EDMM protocol flows as event-emitting state machines.

Each flow appends the hardware and OS events of one protocol round to an
:class:`EventLog` and moves the affected pages to their final state.  Any
object with a compatible ``emit`` can stand in for the log; a
:class:`Counters` does, for callers that only need totals.

Event records are ``(kind, start, len, side)``.  For the page-scoped kinds
(EAUG, EACCEPT, TRIM, EREMOVE, EADD_MEASURE) a record stands for ``len``
per-page events over ``[start, start+len)``.  Every other kind is a single
event; its ``start``/``len`` only name the page range the round is about.

A crossing is any transition among enclave, untrusted runtime and kernel.
PAGE_FAULT counts as one: it stands for the kernel fault handler returning
to the untrusted runtime, the hop between the AEX and the re-entry.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Iterable, NamedTuple

from .errors import InvalidArgument, ProtocolViolation
from .page_pool import PageState


class EventKind(IntEnum):
    EENTER = 0
    EEXIT = 1
    AEX = 2
    ERESUME = 3
    PAGE_FAULT = 4
    SYSCALL_ENTER = 5
    SYSCALL_RETURN = 6
    EAUG = 7
    EACCEPT = 8
    ETRACK = 9
    IPI = 10
    TRIM = 11
    EREMOVE = 12
    EADD_MEASURE = 13


K = EventKind
N_KINDS = len(EventKind)

CROSSING_KINDS = frozenset({
    K.EENTER, K.EEXIT, K.AEX, K.ERESUME, K.PAGE_FAULT,
    K.SYSCALL_ENTER, K.SYSCALL_RETURN, K.IPI,
})
PAGE_KINDS = frozenset({K.EAUG, K.EACCEPT, K.TRIM, K.EREMOVE, K.EADD_MEASURE})

SIDE = {
    K.EENTER: "runtime", K.EEXIT: "enclave", K.AEX: "enclave",
    K.ERESUME: "runtime", K.PAGE_FAULT: "kernel", K.SYSCALL_ENTER: "runtime",
    K.SYSCALL_RETURN: "kernel", K.EAUG: "kernel", K.EACCEPT: "enclave",
    K.ETRACK: "kernel", K.IPI: "kernel", K.TRIM: "kernel",
    K.EREMOVE: "kernel", K.EADD_MEASURE: "kernel",
}

_CROSSING_IDX = tuple(sorted(int(k) for k in CROSSING_KINDS))
_PAGE_MASK = tuple(k in PAGE_KINDS for k in EventKind)


class Event(NamedTuple):
    kind: EventKind
    start: int
    len: int
    side: str

    @property
    def weight(self) -> int:
        return self.len if _PAGE_MASK[self.kind] else 1


class EventLog:
    """Ordered protocol events."""

    __slots__ = ("events",)

    def __init__(self, events: Iterable[Event] = ()) -> None:
        self.events: list[Event] = list(events)

    def emit(self, kind: EventKind, start: int, n: int = 1) -> None:
        self.events.append(Event(kind, start, n, SIDE[kind]))

    def extend(self, other: "EventLog") -> None:
        self.events.extend(other.events)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __add__(self, other: "EventLog") -> "EventLog":
        return EventLog(self.events + other.events)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EventLog) and self.events == other.events

    def dumps(self) -> str:
        return "".join(f"{e.kind.name} {e.start} {e.len} {e.side}\n" for e in self.events)

    @classmethod
    def loads(cls, text: str) -> "EventLog":
        log = cls()
        for line in text.splitlines():
            name, start, n, side = line.split()
            log.events.append(Event(EventKind[name], int(start), int(n), side))
        return log


class Counters:
    """Per-kind event counts plus the derived workload counters."""

    __slots__ = ("counts", "reused_cached_pages", "posix_warnings", "touched_pages")

    def __init__(self) -> None:
        self.counts = [0] * N_KINDS
        self.reused_cached_pages = 0
        self.posix_warnings = 0
        self.touched_pages = 0

    def __getitem__(self, kind: EventKind) -> int:
        return self.counts[kind]

    def emit(self, kind: EventKind, start: int, n: int = 1) -> None:
        """Count one event record directly, without keeping a log."""
        self.counts[kind] += n if _PAGE_MASK[kind] else 1

    def absorb(self, log: EventLog) -> None:
        counts = self.counts
        mask = _PAGE_MASK
        for kind, _start, n, _side in log.events:
            counts[kind] += n if mask[kind] else 1

    @property
    def crossings(self) -> int:
        c = self.counts
        return sum(c[i] for i in _CROSSING_IDX)

    pf = property(lambda self: self.counts[K.PAGE_FAULT])
    aex = property(lambda self: self.counts[K.AEX])
    eenter = property(lambda self: self.counts[K.EENTER])
    eexit = property(lambda self: self.counts[K.EEXIT])
    eresume = property(lambda self: self.counts[K.ERESUME])
    eaug = property(lambda self: self.counts[K.EAUG])
    eaccept = property(lambda self: self.counts[K.EACCEPT])
    eremove = property(lambda self: self.counts[K.EREMOVE])
    trim = property(lambda self: self.counts[K.TRIM])
    eadd_measure = property(lambda self: self.counts[K.EADD_MEASURE])

    def copy(self) -> "Counters":
        c = Counters()
        c.counts = list(self.counts)
        c.reused_cached_pages = self.reused_cached_pages
        c.posix_warnings = self.posix_warnings
        c.touched_pages = self.touched_pages
        return c

    def __add__(self, other: "Counters") -> "Counters":
        c = self.copy()
        c.counts = [a + b for a, b in zip(self.counts, other.counts)]
        c.reused_cached_pages += other.reused_cached_pages
        c.posix_warnings += other.posix_warnings
        c.touched_pages += other.touched_pages
        return c

    def as_dict(self) -> dict[str, int]:
        d = {k.name.lower(): self.counts[k] for k in EventKind}
        d["crossings"] = self.crossings
        d["reused_cached_pages"] = self.reused_cached_pages
        d["posix_warnings"] = self.posix_warnings
        d["touched_pages"] = self.touched_pages
        return d

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Counters) and self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        nonzero = {k: v for k, v in self.as_dict().items() if v}
        return f"Counters({nonzero})"


def summarize(log: EventLog) -> Counters:
    c = Counters()
    c.absorb(log)
    return c


def check_balance(log: EventLog) -> None:
    """Raise if entries and exits do not alternate for the single thread.

    Runtime flows start and end with the thread inside the enclave.
    """
    inside = True
    for e in log.events:
        if e.kind in (K.EENTER, K.ERESUME):
            if inside:
                raise ProtocolViolation(f"{e.kind.name} while already inside the enclave")
            inside = True
        elif e.kind in (K.EEXIT, K.AEX):
            if not inside:
                raise ProtocolViolation(f"{e.kind.name} while outside the enclave")
            inside = False
    if not inside:
        raise ProtocolViolation("log ends outside the enclave")


# -- state checks ----------------------------------------------------------

_MAPPED = bytes([PageState.MAPPED])
_TRIM = bytes([PageState.TRIM_PENDING])
_UNMAPPED = bytes([PageState.UNMAPPED])
_REMOVABLE = frozenset({PageState.MAPPED, PageState.ALLOCATED, PageState.CACHED})


def _require_unmapped(states, start: int, n: int) -> None:
    if states is not None and states[start:start + n].count(PageState.UNMAPPED) != n:
        raise ProtocolViolation(f"pages [{start},{start + n}) are not all Unmapped")


# -- flows -----------------------------------------------------------------

def flow_eager_accept(states, start: int, n: int, log: EventLog | None = None) -> EventLog:
    """EACCEPT-triggered allocation, one fault per page.

    The enclave EACCEPTs an unmapped page, the fault exits the enclave, the
    driver EAUGs it, and the retried EACCEPT succeeds on ERESUME.
    """
    log = EventLog() if log is None else log
    _require_unmapped(states, start, n)
    emit = log.emit
    for p in range(start, start + n):
        emit(K.AEX, p)
        emit(K.PAGE_FAULT, p)
        emit(K.EAUG, p)
        emit(K.ERESUME, p)
        emit(K.EACCEPT, p)
    if states is not None and n:
        states[start:start + n] = _MAPPED * n
    return log


def flow_demand(states, fault_page: int, n: int, region_limit: int,
                log: EventLog | None = None) -> EventLog:
    """Demand fault on ``fault_page``, mapping up to ``n`` pages forward.

    ``region_limit`` is one past the last logically granted, not yet
    accepted page of the run that starts at ``fault_page``.
    """
    if n < 1:
        raise InvalidArgument(f"demand granularity must be >= 1, got {n}")
    k = min(n, region_limit - fault_page)
    if k < 1:
        raise InvalidArgument(f"no unaccepted pages at {fault_page} (limit {region_limit})")
    if states is not None and states[fault_page] != PageState.UNMAPPED:
        raise ProtocolViolation(f"page {fault_page} is already mapped")
    _require_unmapped(states, fault_page, k)
    log = EventLog() if log is None else log
    emit = log.emit
    emit(K.AEX, fault_page)
    emit(K.PAGE_FAULT, fault_page)
    emit(K.EAUG, fault_page)
    if k == 1:
        emit(K.EENTER, fault_page)
        emit(K.EACCEPT, fault_page)
    else:
        emit(K.SYSCALL_ENTER, fault_page, k)
        emit(K.EAUG, fault_page + 1, k - 1)
        emit(K.SYSCALL_RETURN, fault_page, k)
        emit(K.EENTER, fault_page, k)
        emit(K.EACCEPT, fault_page, k)
    emit(K.EEXIT, fault_page, k)
    emit(K.ERESUME, fault_page, k)
    if states is not None:
        states[fault_page:fault_page + k] = _MAPPED * k
    return log


def flow_batch_alloc(states, start: int, n: int, log: EventLog | None = None) -> EventLog:
    """madvise-driven allocation: one kernel round trip for the whole range."""
    log = EventLog() if log is None else log
    if n == 0:
        return log
    _require_unmapped(states, start, n)
    emit = log.emit
    emit(K.EEXIT, start, n)
    emit(K.SYSCALL_ENTER, start, n)
    emit(K.EAUG, start, n)
    emit(K.SYSCALL_RETURN, start, n)
    emit(K.EENTER, start, n)
    emit(K.EACCEPT, start, n)
    if states is not None:
        states[start:start + n] = _MAPPED * n
    return log


def flow_remove(states, start: int, n: int, enclave_threads: int = 1,
                log: EventLog | None = None) -> EventLog:
    """Trim, shoot down, accept and EREMOVE a run of pages.

    One IPI is sent per enclave thread for the TLB shootdown.
    """
    log = EventLog() if log is None else log
    if n == 0:
        return log
    if enclave_threads < 1:
        raise InvalidArgument(f"enclave_threads must be >= 1, got {enclave_threads}")
    end = start + n
    if states is not None:
        present = set(states[start:end])
        if not present <= _REMOVABLE:
            raise ProtocolViolation(
                f"pages [{start},{end}) include Unmapped or TrimPending pages")
    emit = log.emit
    emit(K.EEXIT, start, n)
    emit(K.SYSCALL_ENTER, start, n)
    emit(K.TRIM, start, n)
    if states is not None:
        states[start:end] = _TRIM * n
    emit(K.ETRACK, start, n)
    for _ in range(enclave_threads):
        emit(K.IPI, start, n)
    emit(K.SYSCALL_RETURN, start, n)
    emit(K.EENTER, start, n)
    emit(K.EACCEPT, start, n)
    emit(K.EEXIT, start, n)
    emit(K.SYSCALL_ENTER, start, n)
    emit(K.EREMOVE, start, n)
    if states is not None:
        states[start:end] = _UNMAPPED * n
    emit(K.SYSCALL_RETURN, start, n)
    emit(K.EENTER, start, n)
    return log


def flow_load(measured_pages: int, log: EventLog | None = None) -> EventLog:
    """Launch-time EADD + EEXTEND of every measured page."""
    log = EventLog() if log is None else log
    if measured_pages:
        log.emit(K.EADD_MEASURE, 0, measured_pages)
    return log
