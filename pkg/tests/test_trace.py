import pytest

from edmm_sim.errors import TraceError
from edmm_sim.trace import Access, Mmap, Munmap, Trace, dump, load, parse, serialize
from edmm_sim.workloads import gen_churn, gen_linear, gen_random, gen_server


def test_three_event_trace():
    t = parse("pool 64\nmmap 16\naccess 0 0 16\nmunmap 0 0 16\n")
    assert t.pool_size == 64
    assert t.events == [Mmap(16), Access(0, 0, 16), Munmap(0, 0, 16)]


def test_comments_and_header_metadata():
    text = "pool 8\n# name demo\n# seed 42\n# free text\nmmap 1\n"
    t = parse(text)
    assert (t.name, t.seed, len(t.events)) == ("demo", 42, 1)
    assert serialize(t) == "pool 8\n# name demo\n# seed 42\nmmap 1\n"


@pytest.mark.parametrize("trace", [
    gen_churn(1, 3, 64, 4), gen_server(2, 300, 512), gen_linear(3, 1000, 0.3),
    gen_random(4), Trace(5),
])
def test_round_trip(trace):
    text = serialize(trace)
    back = parse(text)
    assert back == trace
    assert serialize(back) == text


def test_file_round_trip(tmp_path):
    t = gen_random(9)
    dump(t, tmp_path / "t.trace")
    assert load(tmp_path / "t.trace") == t


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("poo 8\n", 1),
    ("pool x\n", 1),
    ("pool 0\n", 1),
    ("pool 8\nmmap 1\nfrob 1\n", 3),
    ("pool 8\nmmap\n", 2),
    ("pool 8\nmmap 1\naccess 0 0\n", 3),
    ("pool 8\nmmap -1\n", 2),
    ("pool 8\nmmap 0\n", 2),
    ("pool 8\nmmap 2\naccess 0 1 2\n", 3),
    ("pool 8\nmmap 2\n\nmunmap 1 0 1\n", 4),
    ("pool 8\nmmap 2\naccess 0 0 1 extra\n", 3),
])
def test_malformed_inputs_name_their_line(text, line):
    with pytest.raises(TraceError) as info:
        parse(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}: ")


def test_forward_reference():
    text = "pool 64\n" + "mmap 1\n" * 5 + "munmap 5 0 1\n"
    with pytest.raises(TraceError, match="line 7"):
        parse(text)


def test_validate_in_memory():
    Trace(8, [Mmap(2), Access(0, 0, 2)]).validate()
    with pytest.raises(TraceError):
        Trace(8, [Access(0, 0, 1)]).validate()
