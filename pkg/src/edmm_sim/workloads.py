"""Deterministic synthetic workloads.

Three allocation-pattern classes:

``churn``   garbage-collector style: generations of tree-sized regions are
            mapped, fully touched, and the oldest freed once more than
            ``live_sets`` are live.
``server``  key-value server style: a large working set mapped up front,
            then many small requests that touch it, with a small mmap and
            munmap every ``churn_every`` requests.
``linear``  a few large mappings of which only a leading fraction is ever
            touched; everything is freed at the end.
``random``  small adversarial traces for differential testing: partial
            frees, stale accesses into freed ranges, occasional overcommit.

Sizes are in pages.  Every generator is a pure function of its arguments;
``random.Random(seed)`` is the only source of variation.
"""

from __future__ import annotations

import random
from collections import deque
from fractions import Fraction

from .trace import Access, Mmap, Munmap, Trace

CHURN_SHIFTS = (3, 2, 1, 0)
"""Each churn iteration maps one generation per shift, sized tree_pages >> shift."""

DEFAULT_POOL = 131072  # 512 MiB


def _require_positive(**kw) -> None:
    for name, value in kw.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


def _touch(events: list, region: int, offset: int, n: int, rng: random.Random,
           max_chunk: int) -> None:
    end = offset + n
    while offset < end:
        k = min(rng.randint(1, max_chunk), end - offset)
        events.append(Access(region, offset, k))
        offset += k


def churn_peak_pages(tree_pages: int, live_sets: int) -> int:
    """Upper bound on live pages of a churn trace."""
    return (live_sets + 1) * (tree_pages + tree_pages // 4 + 1)


def gen_churn(seed: int, n_iters: int, tree_pages: int, live_sets: int,
              pool_size: int | None = None) -> Trace:
    """Allocate/touch/free churn; ``n_iters * len(CHURN_SHIFTS)`` mmaps."""
    _require_positive(n_iters=n_iters, tree_pages=tree_pages, live_sets=live_sets)
    if pool_size is None:
        pool_size = max(DEFAULT_POOL, 2 * churn_peak_pages(tree_pages, live_sets))
    rng = random.Random(seed)
    events: list = []
    live: deque[tuple[int, int]] = deque()
    ordinal = 0
    for _ in range(n_iters):
        for shift in CHURN_SHIFTS:
            base = max(1, tree_pages >> shift)
            size = rng.randint(max(1, base - base // 4), base + base // 4)
            events.append(Mmap(size))
            _touch(events, ordinal, 0, size, rng, max(1, size // 4))
            live.append((ordinal, size))
            ordinal += 1
            if len(live) > 1 and rng.random() < 0.5:
                r, rsize = live[rng.randrange(len(live))]
                off = rng.randrange(rsize)
                events.append(Access(r, off, rng.randint(1, rsize - off)))
            while len(live) > live_sets:
                r, rsize = live.popleft()
                if rsize > 1 and rng.random() < 0.25:
                    half = rsize // 2
                    events.append(Munmap(r, half, rsize - half))
                    events.append(Munmap(r, 0, half))
                else:
                    events.append(Munmap(r, 0, rsize))
    return Trace(pool_size, events, name="churn", seed=seed)


def gen_server(seed: int, n_requests: int, working_set_pages: int,
               churn_every: int = 50, churn_pages: int = 16, churn_live: int = 8,
               region_pages: int = 1024, pool_size: int | None = None) -> Trace:
    """Large steady working set plus light per-request churn.

    mmap count is exactly ``ceil(working_set_pages / region_pages) +
    n_requests // churn_every``; live pages never exceed
    ``working_set_pages + churn_live * churn_pages``.
    """
    _require_positive(n_requests=n_requests, working_set_pages=working_set_pages,
                      churn_every=churn_every, churn_pages=churn_pages,
                      churn_live=churn_live, region_pages=region_pages)
    if pool_size is None:
        pool_size = max(DEFAULT_POOL, 2 * (working_set_pages + (churn_live + 1) * churn_pages))
    rng = random.Random(seed)
    events: list = []
    ws: list[tuple[int, int]] = []
    left = working_set_pages
    while left:
        size = min(region_pages, left)
        events.append(Mmap(size))
        _touch(events, len(ws), 0, size, rng, 64)
        ws.append((len(ws), size))
        left -= size
    ordinal = len(ws)
    small: deque[tuple[int, int]] = deque()
    for req in range(n_requests):
        r, size = ws[rng.randrange(len(ws))]
        off = rng.randrange(size)
        events.append(Access(r, off, min(rng.randint(1, 8), size - off)))
        if req % churn_every == churn_every - 1:
            if len(small) >= churn_live:
                old, osize = small.popleft()
                events.append(Munmap(old, 0, osize))
            size = rng.randint(1, churn_pages)
            events.append(Mmap(size))
            events.append(Access(ordinal, 0, size))
            small.append((ordinal, size))
            ordinal += 1
    return Trace(pool_size, events, name="server", seed=seed)


def gen_linear(seed: int, total_pages: int, touch_fraction: float,
               n_regions: int | None = None, pool_size: int | None = None) -> Trace:
    """Few large mmaps, each touched sequentially over its leading fraction.

    Exactly ``round(touch_fraction * total_pages)`` pages are touched, each
    once.
    """
    _require_positive(total_pages=total_pages)
    frac = Fraction(str(touch_fraction)) if isinstance(touch_fraction, float) \
        else Fraction(touch_fraction)
    if not 0 < frac <= 1:
        raise ValueError(f"touch_fraction must be in (0, 1], got {touch_fraction}")
    rng = random.Random(seed)
    if n_regions is None:
        n_regions = rng.randint(1, 4)
    n_regions = max(1, min(n_regions, total_pages))
    cuts = sorted(rng.sample(range(1, total_pages), n_regions - 1))
    bounds = [0, *cuts, total_pages]
    events: list = []

    def rounded(x: int) -> int:
        return int(frac * x + Fraction(1, 2))

    for i in range(n_regions):
        size = bounds[i + 1] - bounds[i]
        touched = rounded(bounds[i + 1]) - rounded(bounds[i])
        events.append(Mmap(size))
        if touched:
            _touch(events, i, 0, touched, rng, 64)
    for i in range(n_regions):
        events.append(Munmap(i, 0, bounds[i + 1] - bounds[i]))
    return Trace(pool_size or total_pages, events, name="linear", seed=seed)


def gen_random(seed: int, max_pool: int = 1024, max_events: int = 64) -> Trace:
    """Small random trace; live pages stay at or below half the pool.

    About one access in ten lands on an arbitrary range of its region, which
    may include freed pages, and about one mmap in thirty is oversized and
    ignores the live page cap, so failure paths are exercised too.
    """
    _require_positive(max_pool=max_pool, max_events=max_events)
    rng = random.Random(seed)
    pool = rng.randint(min(16, max_pool), max_pool)
    n_events = rng.randint(0, max_events)
    max_len = max(1, pool // 8)
    events: list = []
    sizes: list[int] = []
    held: list[list[int]] = []  # per region: sorted held offsets
    live = 0

    def pieces(offsets: list[int]) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        for off in offsets:
            if out and out[-1][0] + out[-1][1] == off:
                out[-1] = (out[-1][0], out[-1][1] + 1)
            else:
                out.append((off, 1))
        return out

    while len(events) < n_events:
        live_regions = [r for r, h in enumerate(held) if h]
        roll = rng.random()
        if not live_regions or roll < 0.3:
            if rng.random() < 0.03:
                size = rng.randint(pool // 4 + 1, pool)
            else:
                size = rng.randint(1, max_len)
                if live + size > pool // 2:
                    continue
            events.append(Mmap(size))
            sizes.append(size)
            held.append(list(range(size)))
            live += size
        elif roll < 0.75:
            r = rng.choice(live_regions)
            if rng.random() < 0.1:
                off = rng.randrange(sizes[r])
                n = rng.randint(1, sizes[r] - off)
            else:
                start, length = rng.choice(pieces(held[r]))
                off = start + rng.randrange(length)
                n = rng.randint(1, start + length - off)
            events.append(Access(r, off, n))
        else:
            r = rng.choice(live_regions)
            start, length = rng.choice(pieces(held[r]))
            if rng.random() < 0.5:
                off, n = start, length
            else:
                off = start + rng.randrange(length)
                n = rng.randint(1, start + length - off)
            events.append(Munmap(r, off, n))
            gone = set(range(off, off + n))
            held[r] = [p for p in held[r] if p not in gone]
            live -= n
    return Trace(pool, events, name="random", seed=seed)


GENERATORS = {"churn": gen_churn, "server": gen_server, "linear": gen_linear,
              "random": gen_random}
