import dataclasses
from fractions import Fraction

import pytest

from edmm_sim.cost_model import CostParams, default_params, load_params, modeled_time, parse_params
from edmm_sim.flows import Counters, EventKind as K, flow_demand, flow_eager_accept, summarize
from edmm_sim.replay import replay
from edmm_sim.strategy import Mode, StrategyConfig
from edmm_sim.trace import Trace


def test_demand_fault_anchor_30us():
    p = default_params()
    c = summarize(flow_demand(bytearray(4), 0, 1, 4))
    assert modeled_time(c, p).exec_time_us == 30.0


def test_plain_kernel_fault_anchor_8us():
    p = default_params()
    assert p.syscall_enter + p.page_fault + p.syscall_return == 8.0


def test_zero_counters():
    p = default_params()
    assert modeled_time(Counters(), p) == (p.base_load, 0.0)


def test_eager_page_is_sum_of_its_events():
    p = default_params()
    c = summarize(flow_eager_accept(bytearray(4), 0, 1))
    expected = p.aex + p.page_fault + p.eaug + p.eresume + p.eaccept
    assert modeled_time(c, p).exec_time_us == expected


def test_doubling_params_doubles_time():
    p = default_params()
    c = summarize(flow_eager_accept(bytearray(64), 0, 64))
    c.touched_pages = 10
    c.reused_cached_pages = 3
    one = modeled_time(c, p)
    two = modeled_time(c, p.scaled(2))
    assert two == (2 * one[0], 2 * one[1])


def test_additive_except_base_load():
    p = default_params()
    a = summarize(flow_eager_accept(bytearray(8), 0, 8))
    b = summarize(flow_demand(bytearray(8), 0, 4, 8))
    ta, tb, tab = modeled_time(a, p), modeled_time(b, p), modeled_time(a + b, p)
    assert tab.exec_time_us == ta.exec_time_us + tb.exec_time_us
    assert tab.load_time_us == ta.load_time_us + tb.load_time_us - p.base_load


def test_load_ratio_static_vs_edmm_pre64m():
    p = default_params()
    empty = Trace(131072)
    _, static = replay(empty, StrategyConfig(Mode.STATIC), p)
    _, edmm = replay(empty, StrategyConfig(Mode.EDMM, binary_pages=4096, prealloc_pages=16384), p)
    page_term = lambda t: t.load_time_us - p.base_load
    assert page_term(edmm) / page_term(static) == Fraction(20480, 131072)
    assert round(page_term(edmm) / page_term(static), 3) == 0.156


def test_zero_page_term():
    p = dataclasses.replace(CostParams(), zero_page=2.0)
    c = Counters()
    c.reused_cached_pages = 5
    assert modeled_time(c, p).exec_time_us == 10.0


def test_parse_params_and_errors(tmp_path):
    p = parse_params("# comment\neaug = 3  # trailing\n\n", default_params())
    assert p.eaug == 3.0 and p.eaccept == default_params().eaccept
    with pytest.raises(ValueError, match="line 2: unknown"):
        parse_params("eaug = 1\nbogus = 2\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_params("eaug 1\n")
    with pytest.raises(ValueError):
        parse_params("eaug = -1\n")
    f = tmp_path / "c.txt"
    f.write_text("touch_page = 0\n")
    assert load_params(f).touch_page == 0.0


def test_dumps_round_trip():
    p = default_params()
    assert parse_params(p.dumps()) == p


def test_latency_lookup():
    p = default_params()
    assert p.latency(K.EAUG) == p.eaug
    assert p.latency(K.PAGE_FAULT) == p.page_fault
