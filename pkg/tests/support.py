"""Shared corpus and grid for the differential and invariant tests."""

from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

from edmm_sim.errors import ReplayError
from edmm_sim.oracle import oracle_replay
from edmm_sim.replay import run_trace
from edmm_sim.strategy import Mode, StrategyConfig
from edmm_sim.trace import Trace
from edmm_sim.workloads import gen_random

CORPUS_SIZE = 1000
LF = Fraction(15, 100)


def corpus(n: int = CORPUS_SIZE) -> list[Trace]:
    return [gen_random(seed) for seed in range(n)]


def base_points() -> list[StrategyConfig]:
    return [
        StrategyConfig(Mode.STATIC),
        StrategyConfig(Mode.EDMM),
        StrategyConfig(Mode.EDMM, batch=True),
        StrategyConfig(Mode.EDMM_DEMAND, demand_n=1),
        StrategyConfig(Mode.EDMM_DEMAND, demand_n=8),
        StrategyConfig(Mode.EDMM_DEMAND, demand_n=64),
    ]


def grid(pool_size: int) -> list[StrategyConfig]:
    """Every base point with and without pre(12.5%) and lf(15%): 24 cells.

    Static ignores both modifiers at load, but the cells are kept so each
    base point sees the same four variants.
    """
    out = []
    for base in base_points():
        for pre in (0, pool_size // 8):
            for lf in (Fraction(0), LF):
                out.append(replace(base, prealloc_pages=pre, lazy_free_fraction=lf))
    return out


def outcome(trace: Trace, config: StrategyConfig):
    """Counter dict plus load and peak, or ("error", index, cause type)."""
    try:
        report = run_trace(trace, config).report()
    except ReplayError as exc:
        return ("error", exc.index, type(exc.cause).__name__)
    d = report.counters.as_dict()
    d["load_eadd_measure"] = report.load_counters.eadd_measure
    d["peak_mapped"] = report.peak_mapped
    return d


def oracle_outcome(trace: Trace, config: StrategyConfig):
    try:
        return oracle_replay(trace, config)
    except ReplayError as exc:
        return ("error", exc.index, type(exc.cause).__name__)


def runtime(result) -> dict | tuple:
    """Runtime counters only (drops load and peak)."""
    if isinstance(result, tuple):
        return result
    return {k: v for k, v in result.items() if k not in ("load_eadd_measure", "peak_mapped")}


def replayable_prefix(trace: Trace, configs) -> Trace:
    """Longest prefix of ``trace`` that replays without error under every config."""
    cut = len(trace.events)
    for cfg in configs:
        try:
            run_trace(trace, cfg)
        except ReplayError as exc:
            cut = min(cut, exc.index)
    return Trace(trace.pool_size, trace.events[:cut], trace.name, trace.seed)
