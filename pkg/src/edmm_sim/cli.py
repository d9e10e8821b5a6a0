"""Command-line front end.

    edmm-sim gen churn --seed 7 --iters 50 --out churn.trace
    edmm-sim run --trace churn.trace --strategy static --strategy edmm+demand=8
    edmm-sim compare --gen churn:seed=7,n_iters=20 --baseline static \\
        --strategy static --strategy edmm --strategy edmm+pre=64M+batch+lf=15

Reports go to standard output, diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Sequence

from . import trace as trace_mod
from .cost_model import CostParams, default_params, load_params
from .errors import EdmmError, ReplayError
from .replay import replay
from .strategy import Mode, StrategyConfig, parse_label, parse_percent, parse_size
from .workloads import GENERATORS

COLUMNS = ("strategy", "load_us", "exec_us", "pf", "aex", "eenter", "eexit", "eaug",
           "eaccept", "eremove", "crossings", "peak_mapped", "reused", "posix_warnings")
DELTA_COLUMNS = ("load_delta_pct", "exec_delta_pct")
DEFAULT_GRID = ("static", "edmm", "edmm+batch", "edmm+demand")


class UsageError(Exception):
    pass


# -- argument types ----------------------------------------------------------

def _pages(text: str) -> int:
    try:
        return parse_size(text)
    except EdmmError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _unit_fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a fraction, got {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"fraction must be in (0, 1], got {text}")
    return value


def _percent(text: str) -> Fraction:
    try:
        value = parse_percent(text)
    except EdmmError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"percentage must be in [0, 100], got {text}")
    return value


# -- trace sources -----------------------------------------------------------

def _gen_value(text: str):
    for conv in (int, Fraction):
        try:
            return conv(text)
        except (ValueError, ZeroDivisionError):
            pass
    raise UsageError(f"bad generator parameter value {text!r}")


def parse_gen_spec(spec: str) -> trace_mod.Trace:
    """Build a trace from ``name:key=value,...``, e.g. ``churn:seed=7,n_iters=10``."""
    name, _, rest = spec.partition(":")
    if name not in GENERATORS:
        raise UsageError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"generator parameter {item!r} is not key=value")
        kwargs[key.strip()] = _gen_value(value.strip())
    kwargs.setdefault("seed", 0)
    try:
        return _call_generator(name, kwargs)
    except TypeError as exc:
        raise UsageError(f"{name}: {exc}") from None


def _call_generator(name: str, kwargs: dict) -> trace_mod.Trace:
    if name == "churn":
        kwargs.setdefault("n_iters", 20)
        kwargs.setdefault("tree_pages", 2048)
        kwargs.setdefault("live_sets", 16)
    elif name == "server":
        kwargs.setdefault("n_requests", 10000)
        kwargs.setdefault("working_set_pages", 16384)
    elif name == "linear":
        kwargs.setdefault("total_pages", 65536)
        kwargs.setdefault("touch_fraction", Fraction(1, 2))
    try:
        return GENERATORS[name](**kwargs)
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from None


def _load_trace(args) -> trace_mod.Trace:
    if args.trace is not None:
        return trace_mod.load(args.trace)
    return parse_gen_spec(args.gen)


# -- strategies --------------------------------------------------------------

def strategies_from_args(args) -> list[StrategyConfig]:
    fields = {"binary_pages": args.binary, "enclave_threads": args.threads}
    mode_flags = (args.mode is not None or args.prealloc is not None or args.batch
                  or args.demand_n is not None or args.lazy_free is not None)
    if args.strategy:
        if mode_flags:
            raise UsageError("--strategy cannot be combined with --mode/--prealloc/"
                             "--batch/--demand-n/--lazy-free")
        try:
            return [parse_label(label, **fields) for label in args.strategy]
        except EdmmError as exc:
            raise UsageError(str(exc)) from None
    if not mode_flags:
        return []
    mode = {"static": Mode.STATIC, "edmm": Mode.EDMM, "edmm-demand": Mode.EDMM_DEMAND,
            None: Mode.EDMM}[args.mode]
    if args.demand_n is not None:
        if mode is Mode.STATIC:
            raise UsageError("--demand-n does not apply to --mode static")
        mode = Mode.EDMM_DEMAND
    if mode is Mode.STATIC and (args.prealloc or args.batch or args.lazy_free):
        raise UsageError("static mode takes no --prealloc/--batch/--lazy-free")
    return [StrategyConfig(
        mode=mode,
        prealloc_pages=args.prealloc or 0,
        batch=args.batch,
        demand_n=args.demand_n or 1,
        lazy_free_fraction=args.lazy_free or Fraction(0),
        **fields,
    )]


# -- evaluation and formatting -----------------------------------------------

def evaluate(item: tuple[trace_mod.Trace, StrategyConfig, CostParams]) -> dict:
    trace, config, params = item
    report, times = replay(trace, config, params)
    c = report.counters
    return {
        "strategy": config.label,
        "load_us": times.load_time_us,
        "exec_us": times.exec_time_us,
        "pf": c.pf, "aex": c.aex, "eenter": c.eenter, "eexit": c.eexit,
        "eaug": c.eaug, "eaccept": c.eaccept, "eremove": c.eremove,
        "crossings": c.crossings, "peak_mapped": report.peak_mapped,
        "reused": c.reused_cached_pages, "posix_warnings": c.posix_warnings,
    }


def run_grid(trace, configs, params, jobs: int = 1) -> list[dict]:
    items = [(trace, cfg, params) for cfg in configs]
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(evaluate, items))
    return [evaluate(item) for item in items]


def _delta(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else float("inf")
    return 100.0 * (value - base) / base


def add_deltas(rows: list[dict], baseline: str) -> None:
    base = next((r for r in rows if r["strategy"] == baseline), None)
    if base is None:
        raise UsageError(f"baseline {baseline!r} is not among the strategies")
    for r in rows:
        r["load_delta_pct"] = _delta(r["load_us"], base["load_us"])
        r["exec_delta_pct"] = _delta(r["exec_us"], base["exec_us"])


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}" if value == value and abs(value) != float("inf") else str(value)
    return str(value)


def format_rows(rows: list[dict], columns: Sequence[str], fmt: str) -> str:
    cells = [[_cell(r[c]) for c in columns] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(cells)
        return buf.getvalue()
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                       for i, (c, w) in enumerate(zip(columns, widths)))]
    for row in cells:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w)
                               for i, (v, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    name = args.generator
    if name == "churn":
        trace = GENERATORS[name](args.seed, args.iters, args.tree_pages, args.live_sets,
                                 pool_size=args.pool)
    elif name == "server":
        trace = GENERATORS[name](args.seed, args.requests, args.working_set,
                                 churn_every=args.churn_every, churn_pages=args.churn_pages,
                                 churn_live=args.churn_live, region_pages=args.region_pages,
                                 pool_size=args.pool)
    elif name == "linear":
        trace = GENERATORS[name](args.seed, args.total_pages, args.touch,
                                 n_regions=args.regions, pool_size=args.pool)
    else:
        trace = GENERATORS[name](args.seed, args.max_pool, args.max_events)
    text = trace_mod.serialize(trace)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        try:
            with open(args.out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"edmm-sim: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
            return 1
        print(f"wrote {len(trace.events)} events to {args.out}", file=sys.stderr)
    return 0


def _params(args) -> CostParams:
    return load_params(args.costs) if args.costs else default_params()


def cmd_run(args) -> int:
    configs = strategies_from_args(args) or [parse_label("edmm", binary_pages=args.binary,
                                                         enclave_threads=args.threads)]
    rows = run_grid(_load_trace(args), configs, _params(args), args.jobs)
    sys.stdout.write(format_rows(rows, COLUMNS, args.format))
    return 0


def cmd_compare(args) -> int:
    configs = strategies_from_args(args)
    if not configs:
        configs = [parse_label(label, binary_pages=args.binary, enclave_threads=args.threads)
                   for label in DEFAULT_GRID]
    if len(configs) < 2:
        raise UsageError("compare needs at least two strategies")
    baseline = configs[0].label
    if args.baseline:
        try:
            baseline = parse_label(args.baseline).label
        except EdmmError as exc:
            raise UsageError(str(exc)) from None
        if baseline not in [cfg.label for cfg in configs]:
            raise UsageError(f"baseline {baseline!r} is not among the strategies")
    rows = run_grid(_load_trace(args), configs, _params(args), args.jobs)
    add_deltas(rows, baseline)
    sys.stdout.write(format_rows(rows, COLUMNS + DELTA_COLUMNS, args.format))
    return 0


# -- parser ------------------------------------------------------------------

def _add_replay_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", metavar="PATH", help="trace file to replay")
    src.add_argument("--gen", metavar="SPEC",
                     help="generate the trace in memory, e.g. churn:seed=7,n_iters=10")
    p.add_argument("--strategy", action="append", metavar="LABEL",
                   help="strategy label such as edmm+pre=64M+batch+lf=15 (repeatable)")
    p.add_argument("--mode", choices=("static", "edmm", "edmm-demand"))
    p.add_argument("--prealloc", type=_pages, metavar="SIZE",
                   help="memory mapped at launch, bytes with K/M/G suffix")
    p.add_argument("--batch", action="store_true", help="one madvise round trip per mmap")
    p.add_argument("--demand-n", type=_positive, metavar="N",
                   help="pages mapped per demand fault (implies demand allocation)")
    p.add_argument("--lazy-free", type=_percent, metavar="PCT",
                   help="cache freed pages up to this percentage of the pool")
    p.add_argument("--binary", type=_pages, default=0, metavar="SIZE",
                   help="enclave binary size, measured at launch")
    p.add_argument("--threads", type=_positive, default=1, help="enclave threads (IPIs)")
    p.add_argument("--costs", metavar="FILE", help="cost parameter file")
    p.add_argument("--format", choices=("csv", "table"), default="csv")
    p.add_argument("--jobs", type=_positive, default=1,
                   help="evaluate strategies in parallel; output order is unchanged")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edmm-sim",
                                     description="Trace-driven SGX2 EDMM memory simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic trace")
    gsub = gen.add_subparsers(dest="generator", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")

    g = gsub.add_parser("churn", parents=[common], help="garbage-collector style churn")
    g.add_argument("--iters", type=_positive, default=20)
    g.add_argument("--tree-pages", type=_positive, default=2048)
    g.add_argument("--live-sets", type=_positive, default=16)
    g.add_argument("--pool", type=_pages, metavar="SIZE")

    g = gsub.add_parser("server", parents=[common], help="key-value server style")
    g.add_argument("--requests", type=_positive, default=10000)
    g.add_argument("--working-set", type=_positive, default=16384, metavar="PAGES")
    g.add_argument("--churn-every", type=_positive, default=50)
    g.add_argument("--churn-pages", type=_positive, default=16)
    g.add_argument("--churn-live", type=_positive, default=8)
    g.add_argument("--region-pages", type=_positive, default=1024)
    g.add_argument("--pool", type=_pages, metavar="SIZE")

    g = gsub.add_parser("linear", parents=[common], help="partially touched large mappings")
    g.add_argument("--total-pages", type=_positive, default=65536)
    g.add_argument("--touch", type=_unit_fraction, default=Fraction(1, 2),
                   help="fraction of mapped pages that are touched, in (0, 1]")
    g.add_argument("--regions", type=_positive)
    g.add_argument("--pool", type=_pages, metavar="SIZE")

    g = gsub.add_parser("random", parents=[common], help="small adversarial trace")
    g.add_argument("--max-pool", type=_positive, default=1024)
    g.add_argument("--max-events", type=_positive, default=64)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="replay a trace under one or more strategies")
    _add_replay_args(run)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="replay a strategy grid with deltas vs a baseline")
    _add_replay_args(cmp_)
    cmp_.add_argument("--baseline", metavar="LABEL",
                      help="strategy the deltas are relative to (default: the first)")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except ReplayError as exc:
        print(f"edmm-sim: replay failed at {exc}", file=sys.stderr)
        return 1
    except (EdmmError, OSError, ValueError) as exc:
        print(f"edmm-sim: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
