from fractions import Fraction

import pytest

from edmm_sim.errors import InvalidArgument, OutOfMemory, UseAfterFree
from edmm_sim.flows import summarize
from edmm_sim.page_pool import PageState
from edmm_sim.strategy import (
    Manager,
    Mode,
    StrategyConfig,
    format_label,
    mm_access,
    mm_load,
    mm_mmap,
    mm_munmap,
    mm_report,
    parse_label,
    parse_size,
)

EDMM = StrategyConfig(Mode.EDMM)
BATCH = StrategyConfig(Mode.EDMM, batch=True)


def demand(n=1, **kw):
    return StrategyConfig(Mode.EDMM_DEMAND, demand_n=n, **kw)


# -- load ----------------------------------------------------------------------

def test_static_load_measures_whole_pool():
    mgr = mm_load(StrategyConfig(Mode.STATIC), 131072)
    rep = mm_report(mgr)
    assert rep.load_counters.eadd_measure == 131072
    assert rep.counters.crossings == 0 and rep.counters.eadd_measure == 0
    assert rep.peak_mapped == 131072


def test_edmm_load_binary_plus_prealloc():
    cfg = StrategyConfig(Mode.EDMM, binary_pages=4096, prealloc_pages=parse_size("64M"))
    assert mm_report(mm_load(cfg, 131072)).load_counters.eadd_measure == 20480


def test_full_prealloc_loads_like_static():
    cfg = StrategyConfig(Mode.EDMM, binary_pages=16, prealloc_pages=1024 - 16)
    a = mm_report(mm_load(cfg, 1024)).load_counters
    b = mm_report(mm_load(StrategyConfig(Mode.STATIC, binary_pages=16), 1024)).load_counters
    assert a == b


def test_load_size_violations():
    with pytest.raises(InvalidArgument):
        mm_load(StrategyConfig(Mode.EDMM, binary_pages=10, prealloc_pages=7), 16)
    with pytest.raises(InvalidArgument):
        mm_load(StrategyConfig(Mode.STATIC, binary_pages=17), 16)


def test_binary_region_is_held():
    mgr = mm_load(StrategyConfig(Mode.EDMM, binary_pages=4), 16)
    assert mgr.binary_region.start == 0
    assert mm_mmap(mgr, 2).start == 4


# -- mmap ----------------------------------------------------------------------

def test_edmm_mmap_eager():
    mgr = mm_load(EDMM, 64)
    mm_mmap(mgr, 16)
    c = mm_report(mgr).counters
    assert (c.pf, c.crossings) == (16, 48)


def test_edmm_mmap_batch():
    mgr = mm_load(BATCH, 64)
    mm_mmap(mgr, 16)
    c = mm_report(mgr).counters
    assert (c.crossings, c.eaug, c.eaccept, c.pf) == (4, 16, 16, 0)


def test_demand_mmap_is_lazy():
    mgr = mm_load(demand(), 64)
    mm_mmap(mgr, 16)
    assert mm_report(mgr).counters.crossings == 0
    assert mm_report(mgr).peak_mapped == 0


def test_prealloc_pages_are_free_to_hand_out():
    mgr = mm_load(StrategyConfig(Mode.EDMM, prealloc_pages=8), 64)
    mm_mmap(mgr, 10)
    c = mm_report(mgr).counters
    assert c.eaug == 2 and c.crossings == 6


def test_out_of_memory():
    mgr = mm_load(EDMM, 8)
    mm_mmap(mgr, 6)
    with pytest.raises(OutOfMemory):
        mm_mmap(mgr, 3)


def test_flush_and_retry_before_out_of_memory():
    mgr = mm_load(StrategyConfig(Mode.EDMM, lazy_free_fraction=Fraction(1, 2)), 8)
    r = mm_mmap(mgr, 4)
    mm_munmap(mgr, r, 0, 4)
    assert mgr.pool.cached_count == 4
    mm_mmap(mgr, 3)  # reuses 3 cached pages
    with pytest.raises(OutOfMemory):
        mm_mmap(mgr, 6)
    assert mgr.pool.cached_count == 0
    assert mm_report(mgr).counters.eremove == 1


# -- access --------------------------------------------------------------------

def test_demand_n1_sixteen_faults():
    mgr = mm_load(demand(), 64)
    r = mm_mmap(mgr, 16)
    for i in range(16):
        mm_access(mgr, r, i, 1)
    c = mm_report(mgr).counters
    assert (c.pf, c.crossings) == (16, 80)


def test_demand_n8_sequential():
    mgr = mm_load(demand(8), 64)
    r = mm_mmap(mgr, 16)
    for i in range(16):
        mm_access(mgr, r, i, 1)
    c = mm_report(mgr).counters
    assert (c.pf, c.crossings, c.eaug, c.eaccept) == (2, 14, 16, 16)


def test_demand_range_access_faults_in_order():
    mgr = mm_load(demand(4), 64)
    r = mm_mmap(mgr, 10)
    mm_access(mgr, r, 0, 10)
    c = mm_report(mgr).counters
    assert (c.pf, c.eaug) == (3, 10)  # 4 + 4 + 2


def test_demand_does_not_cross_region_end():
    mgr = mm_load(demand(64), 64)
    a = mm_mmap(mgr, 3)
    mm_mmap(mgr, 8)
    mm_access(mgr, a, 0, 1)
    assert mm_report(mgr).counters.eaug == 3


def test_access_to_allocated_is_free():
    mgr = mm_load(EDMM, 64)
    r = mm_mmap(mgr, 8)
    before = mm_report(mgr).counters.as_dict()
    mm_access(mgr, r, 0, 8)
    after = mm_report(mgr).counters.as_dict()
    assert after.pop("touched_pages") == 8
    before.pop("touched_pages")
    assert before == after


def test_use_after_free_unmapped():
    mgr = mm_load(EDMM, 64)
    r = mm_mmap(mgr, 4)
    mm_munmap(mgr, r, 0, 4)
    with pytest.raises(UseAfterFree):
        mm_access(mgr, r, 0, 1)


def test_stale_access_to_cached_pages_warns():
    mgr = mm_load(StrategyConfig(Mode.EDMM, lazy_free_fraction=Fraction(1, 2)), 64)
    r = mm_mmap(mgr, 4)
    mm_munmap(mgr, r, 0, 4)
    mm_access(mgr, r, 1, 2)
    assert mm_report(mgr).posix_warnings == 1


def test_stale_access_to_pinned_pages_warns():
    mgr = mm_load(StrategyConfig(Mode.STATIC), 64)
    r = mm_mmap(mgr, 4)
    mm_munmap(mgr, r, 2, 2)
    mm_access(mgr, r, 0, 4)
    assert mm_report(mgr).posix_warnings == 1


def test_bounds():
    mgr = mm_load(EDMM, 64)
    r = mm_mmap(mgr, 4)
    with pytest.raises(InvalidArgument):
        mm_access(mgr, r, 3, 2)
    with pytest.raises(InvalidArgument):
        mm_munmap(mgr, r, 4, 1)


# -- munmap --------------------------------------------------------------------

def test_munmap_one_removal_per_run():
    mgr = mm_load(EDMM, 64)
    r = mm_mmap(mgr, 32)
    before = mm_report(mgr).counters.crossings
    mm_munmap(mgr, r, 0, 32)
    c = mm_report(mgr).counters
    assert c.crossings - before == 9 and c.eremove == 32


def test_static_munmap_is_silent():
    mgr = mm_load(StrategyConfig(Mode.STATIC), 64)
    r = mm_mmap(mgr, 32)
    mm_munmap(mgr, r, 0, 32)
    assert mm_report(mgr).counters.crossings == 0
    assert mgr.pool.counts().mapped == 64


def test_demand_munmap_untouched_is_silent():
    mgr = mm_load(demand(), 64)
    r = mm_mmap(mgr, 16)
    mm_munmap(mgr, r, 0, 16)
    assert mm_report(mgr).counters.crossings == 0


def test_demand_munmap_removes_only_faulted_runs():
    mgr = mm_load(demand(), 64)
    r = mm_mmap(mgr, 16)
    mm_access(mgr, r, 2, 2)
    mm_access(mgr, r, 8, 1)
    mm_munmap(mgr, r, 0, 16)
    c = mm_report(mgr).counters
    assert c.eremove == 3 and c.trim == 3
    assert c.counts[11] == 3  # trim by index, as a cross-check of the enum order


def test_lazy_free_eviction_threshold_and_fifo():
    # 80 cached, then 100 more freed: 180 > floor(0.15 * 1024) = 153,
    # so 180 - 153 = 27 pages go, oldest first.
    mgr = mm_load(StrategyConfig(Mode.EDMM, lazy_free_fraction=Fraction(15, 100)), 1024)
    old = mm_mmap(mgr, 80)
    new = mm_mmap(mgr, 100)
    mm_munmap(mgr, old, 0, 80)
    assert mgr.pool.cached_count == 80
    assert mm_report(mgr).counters.eremove == 0
    mm_munmap(mgr, new, 0, 100)
    c = mm_report(mgr).counters
    assert c.eremove == 27
    assert mgr.pool.cached_count == 153
    states = mgr.pool.states
    assert states[:27] == bytearray(27)
    assert set(states[27:180]) == {PageState.CACHED}


def test_lazy_free_reuse():
    mgr = mm_load(StrategyConfig(Mode.EDMM, lazy_free_fraction=Fraction(1, 2)), 64)
    r = mm_mmap(mgr, 8)
    mm_munmap(mgr, r, 0, 8)
    before = mm_report(mgr).counters.crossings
    mm_mmap(mgr, 8)
    rep = mm_report(mgr)
    assert rep.reused_cached_pages == 8 and rep.counters.crossings == before


def test_cache_bound_always_holds():
    cfg = StrategyConfig(Mode.EDMM, lazy_free_fraction=Fraction(1, 10))
    mgr = mm_load(cfg, 100)
    regions = [mm_mmap(mgr, 7) for _ in range(12)]
    for r in regions:
        mm_munmap(mgr, r, 0, 7)
        assert mgr.pool.cached_count <= 10


# -- report --------------------------------------------------------------------

def test_fresh_report_is_zero():
    rep = mm_report(mm_load(EDMM, 64))
    assert rep.counters.crossings == 0 and rep.peak_mapped == 0


def test_report_after_eager_mmap():
    mgr = mm_load(EDMM, 64)
    mm_mmap(mgr, 16)
    assert mm_report(mgr).counters.pf == 16


def test_record_mode_matches_counting_mode():
    def script(mgr):
        r = mm_mmap(mgr, 12)
        mm_access(mgr, r, 0, 12)
        mm_munmap(mgr, r, 3, 4)
        return mm_report(mgr)

    cfg = demand(4, lazy_free_fraction=Fraction(1, 20))
    a = script(Manager(cfg, 64))
    mgr = Manager(cfg, 64, record=True)
    b = script(mgr)
    assert a.counters == b.counters
    logged = summarize(mgr.log)
    assert logged.counts == (b.counters + b.load_counters).counts


# -- labels --------------------------------------------------------------------

@pytest.mark.parametrize("label", [
    "static", "edmm", "edmm+demand", "edmm+demand=8", "edmm+batch",
    "edmm+pre=64M", "edmm+pre=64M+batch+lf=15", "edmm+pre=4K+demand=64+lf=5",
    "edmm+lf=12.5",
])
def test_label_round_trip(label):
    assert format_label(parse_label(label)) == label


def test_label_canonical_order():
    assert parse_label("edmm+lf=15+batch+pre=64M").label == "edmm+pre=64M+batch+lf=15"


def test_label_fields():
    cfg = parse_label("edmm+pre=64M+batch+demand=8+lf=15", binary_pages=4)
    assert cfg == StrategyConfig(Mode.EDMM_DEMAND, prealloc_pages=16384, batch=True,
                                 demand_n=8, lazy_free_fraction=Fraction(3, 20),
                                 binary_pages=4)


@pytest.mark.parametrize("label", ["bogus", "static+batch", "edmm+demand=0",
                                   "edmm+lf=150", "edmm+pre", "edmm+frob"])
def test_bad_labels(label):
    with pytest.raises(InvalidArgument):
        parse_label(label)


def test_sizes_round_up_to_pages():
    assert parse_size("1") == 1
    assert parse_size("4096") == 1
    assert parse_size("4097") == 2
    assert parse_size("64M") == 16384
    assert parse_size("1G") == 262144
    with pytest.raises(InvalidArgument):
        parse_size("12X")
