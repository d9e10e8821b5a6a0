"""Drive a trace through a :class:`Manager` and price the result."""

from __future__ import annotations

from .cost_model import CostParams, TimeReport, default_params, modeled_time
from .errors import EdmmError, ReplayError
from .strategy import Manager, Report, StrategyConfig
from .trace import Access, Mmap, Trace


def run_trace(trace: Trace, config: StrategyConfig, record: bool = False) -> Manager:
    """Replay every event and return the manager in its final state."""
    mgr = Manager(config, trace.pool_size, record=record)
    regions: list = []
    mmap, access, munmap = mgr.mmap, mgr.access, mgr.munmap
    add_region = regions.append
    i = -1
    try:
        for i, ev in enumerate(trace.events):
            t = type(ev)
            if t is Access:
                access(regions[ev.region], ev.offset, ev.len)
            elif t is Mmap:
                add_region(mmap(ev.len))
            else:
                munmap(regions[ev.region], ev.offset, ev.len)
    except EdmmError as exc:
        raise ReplayError(i, exc) from exc
    except IndexError as exc:
        raise ReplayError(i, EdmmError(f"region {ev.region} has no earlier mmap")) from exc
    return mgr


def replay(trace: Trace, config: StrategyConfig,
           params: CostParams | None = None) -> tuple[Report, TimeReport]:
    if params is None:
        params = default_params()
    report = run_trace(trace, config).report()
    return report, modeled_time(report.counters + report.load_counters, params)
