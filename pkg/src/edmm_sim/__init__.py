"""Trace-driven simulator of SGX2 enclave dynamic memory management."""

from .cost_model import CostParams, TimeReport, default_params, load_params, modeled_time
from .errors import (
    EdmmError,
    InvalidArgument,
    OutOfMemory,
    OutOfSpace,
    ProtocolViolation,
    ReplayError,
    TraceError,
    UseAfterFree,
)
from .flows import (
    Counters,
    EventKind,
    EventLog,
    flow_batch_alloc,
    flow_demand,
    flow_eager_accept,
    flow_load,
    flow_remove,
)
from .oracle import oracle_replay
from .page_pool import PAGE_SIZE, PagePool, PageState, Region
from .replay import replay, run_trace
from .strategy import Manager, Mode, Report, StrategyConfig, parse_label
from .trace import Access, Mmap, Munmap, Trace

__all__ = [
    "PAGE_SIZE", "Access", "CostParams", "Counters", "EdmmError", "EventKind", "EventLog",
    "InvalidArgument", "Manager", "Mmap", "Mode", "Munmap", "OutOfMemory", "OutOfSpace",
    "PagePool", "PageState", "ProtocolViolation", "Region", "Report", "ReplayError",
    "StrategyConfig", "TimeReport", "Trace", "TraceError", "UseAfterFree",
    "default_params", "flow_batch_alloc", "flow_demand", "flow_eager_accept", "flow_load",
    "flow_remove", "load_params", "modeled_time", "oracle_replay", "parse_label", "replay",
    "run_trace",
]
