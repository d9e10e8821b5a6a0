"""Linear cost model turning event counters into modeled time."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .flows import Counters, EventKind

_KIND_FIELDS = tuple(k.name.lower() for k in EventKind)


@dataclass(frozen=True)
class CostParams:
    """Latency in microseconds of each event kind plus three extra terms."""

    eenter: float = 0.0
    eexit: float = 0.0
    aex: float = 0.0
    eresume: float = 0.0
    page_fault: float = 0.0
    syscall_enter: float = 0.0
    syscall_return: float = 0.0
    eaug: float = 0.0
    eaccept: float = 0.0
    etrack: float = 0.0
    ipi: float = 0.0
    trim: float = 0.0
    eremove: float = 0.0
    eadd_measure: float = 0.0
    base_load: float = 0.0
    zero_page: float = 0.0
    touch_page: float = 0.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def latency(self, kind: EventKind) -> float:
        return getattr(self, _KIND_FIELDS[kind])

    def scaled(self, factor: float) -> "CostParams":
        return CostParams(**{k: v * factor for k, v in dataclasses.asdict(self).items()})

    def dumps(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in dataclasses.asdict(self).items())


class TimeReport(NamedTuple):
    load_time_us: float
    exec_time_us: float


def parse_params(text: str, base: CostParams | None = None) -> CostParams:
    """Parse ``name = microseconds`` lines; missing names keep ``base``."""
    known = {f.name for f in dataclasses.fields(CostParams)}
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not name or not value:
            raise ValueError(f"line {lineno}: expected 'name = microseconds', got {raw!r}")
        if name not in known:
            raise ValueError(f"line {lineno}: unknown cost parameter {name!r}")
        try:
            values[name] = float(value)
        except ValueError:
            raise ValueError(f"line {lineno}: {value!r} is not a number") from None
    try:
        return CostParams(**values)
    except ValueError as exc:
        raise ValueError(str(exc)) from None


def load_params(path: str | Path, base: CostParams | None = None) -> CostParams:
    if base is None:
        base = default_params()
    return parse_params(Path(path).read_text(), base)


def default_params() -> CostParams:
    text = resources.files(__package__).joinpath("default_costs.txt").read_text()
    return parse_params(text)


def modeled_time(counters: Counters, params: CostParams) -> TimeReport:
    counts = counters.counts
    exec_us = 0.0
    for kind in EventKind:
        if kind is EventKind.EADD_MEASURE:
            continue
        n = counts[kind]
        if n:
            exec_us += n * params.latency(kind)
    exec_us += counters.reused_cached_pages * params.zero_page
    exec_us += counters.touched_pages * params.touch_page
    load_us = params.base_load + counts[EventKind.EADD_MEASURE] * params.eadd_measure
    return TimeReport(load_us, exec_us)
