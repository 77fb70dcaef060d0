import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itb.errors import (
    EmptyTrace,
    MalformedLine,
    NonMonotoneThread,
    OrphanDescriptor,
    SchemaViolation,
)
from itb.trace import (
    HEADER,
    IoStream,
    OpKind,
    TraceEvent,
    characterize,
    derive_think_times,
    parse_trace,
    serialize_trace,
)

from conftest import ev, random_stream, thread_events

MS = 1_000_000


def trace_text(*rows):
    return "\n".join([HEADER, *rows]) + "\n"


# -- parse_trace ------------------------------------------------------------


def test_single_read_line():
    s = parse_trace(trace_text("s,1,1,read,3,,4096,0,1000"))
    # the orphan fd gets a synthetic open in front of it
    assert [e.op for e in s.events] == [OpKind.OPEN, OpKind.READ]
    read = s.events[1]
    assert (read.fd, read.nbytes, read.t_start, read.t_end) == (3, 4096, 0, 1000)
    assert read.response_time == 1000


def test_single_read_line_strict_needs_open():
    with pytest.raises(OrphanDescriptor) as exc:
        parse_trace(trace_text("s,1,1,read,3,,4096,0,1000"), strict=True)
    assert exc.value.line_no == 2


def test_write_without_nbytes_is_schema_violation():
    with pytest.raises(SchemaViolation) as exc:
        parse_trace(trace_text('s,1,1,open,"3:f",,,0,10', "s,1,1,write,3,,,20,30"))
    assert exc.value.field == "nbytes"
    assert exc.value.line_no == 3


@pytest.mark.parametrize(
    "row, field",
    [
        ("s,1,1,read,3,0,10,0,1", "offset"),  # offset only for lseek
        ("s,1,1,lseek,3,,,0,1", "offset"),
        ("s,1,1,lseek,3,5,7,0,1", "nbytes"),
        ("s,1,1,close,,,,0,1", "fd"),
        ("s,1,1,open,3,,,0,1", "path"),
        ("s,1,1,frob,3,,,0,1", "op"),
        ("s,1,1,read,3,,10,5,1", "t_end"),
        ("s,1,1,read,3,,-1,0,1", "nbytes"),
    ],
)
def test_field_presence(row, field):
    with pytest.raises(SchemaViolation) as exc:
        parse_trace(trace_text(row))
    assert exc.value.field == field


@pytest.mark.parametrize(
    "text",
    [
        "not a header\n",
        trace_text("s,1,1,read,3,,10,0"),
        trace_text("s,1,1,read,3,,ten,0,1"),
        trace_text('s,1,1,open,"3:f,,,0,1'),
        "",
    ],
)
def test_malformed(text):
    with pytest.raises(MalformedLine):
        parse_trace(text)


def test_comments_and_blank_lines_are_skipped():
    s = parse_trace("# leading comment\n\n" + trace_text('s,1,1,open,"3:a b",,,0,1', "# mid", "", "s,1,1,close,3,,,2,3"))
    assert [e.op for e in s.events] == [OpKind.OPEN, OpKind.CLOSE]
    assert s.events[0].path == "a b"


def test_mixed_stream_ids_rejected():
    with pytest.raises(SchemaViolation) as exc:
        parse_trace(trace_text('a,1,1,open,"3:f",,,0,1', "b,1,1,close,3,,,2,3"))
    assert exc.value.field == "stream_id"


SIX_EVENTS = [
    # stream,pid,tid,op,arg,offset,nbytes,t_start,t_end  (interleaved threads, unsorted input)
    ('s,7,1,open,"3:x",,,0,5'),
    ('s,7,2,open,"4:y",,,2,6'),
    ("s,7,2,write,4,,100,20,25"),
    ("s,7,1,read,3,,50,10,15"),
    ("s,7,1,close,3,,,30,31"),
    ("s,7,2,close,4,,,26,40"),
]


def test_six_event_fixture_partitions_by_thread():
    s = parse_trace(trace_text(*SIX_EVENTS))

    # independent oracle: group raw rows by tid after a plain sort on t_start
    rows = [r.split(",") for r in SIX_EVENTS]
    rows.sort(key=lambda r: int(r[7]))
    expected = {
        tid: [(r[3], int(r[7])) for r in grp]
        for tid, grp in itertools.groupby(sorted(rows, key=lambda r: (r[2], int(r[7]))), key=lambda r: r[2])
    }

    assert sorted(len(v) for v in s.threads.values()) == [3, 3]
    for (pid, tid), events in s.threads.items():
        assert [(e.op.value, e.t_start) for e in events] == expected[str(tid)]
    assert [e.t_start for e in s.events] == sorted(int(r[7]) for r in rows)


def test_ties_broken_by_input_order():
    s = parse_trace(
        trace_text('s,1,1,open,"3:a",,,0,0', 's,1,2,open,"4:b",,,0,0', 's,1,3,open,"5:c",,,0,0')
    )
    assert [e.fd for e in s.events] == [3, 4, 5]


def test_overlap_repair_clamps_start():
    s = parse_trace(trace_text('s,1,1,open,"3:f",,,0,100', "s,1,1,read,3,,1,50,70", "s,1,1,read,3,,1,60,200"))
    starts = [(e.t_start, e.t_end) for e in s.events]
    assert starts == [(0, 100), (100, 100), (100, 200)]


def test_overlap_strict():
    with pytest.raises(NonMonotoneThread) as exc:
        parse_trace(trace_text('s,1,1,open,"3:f",,,0,100', "s,1,1,read,3,,1,50,70"), strict=True)
    assert exc.value.index == 1


def test_orphan_repair_synthesizes_open():
    s = parse_trace(trace_text("s,1,1,lseek,9,100,,40,41", "s,1,1,close,9,,,50,51"))
    first = s.events[0]
    assert first.op is OpKind.OPEN and first.path == "orphan-9" and first.t_start == 40
    # fd scope is the process: another thread of the same pid may use it
    s2 = parse_trace(trace_text('s,1,1,open,"3:f",,,0,1', "s,1,2,read,3,,5,2,3"))
    assert len(s2) == 2


def test_closed_fd_becomes_orphan_again():
    s = parse_trace(trace_text('s,1,1,open,"3:f",,,0,1', "s,1,1,close,3,,,2,3", "s,1,1,read,3,,5,4,5"))
    assert [e.op for e in s.events] == [OpKind.OPEN, OpKind.CLOSE, OpKind.OPEN, OpKind.READ]


def test_meta_may_omit_fd():
    s = parse_trace(trace_text("s,1,1,meta,,,,0,1"))
    assert s.events[0].fd is None


# -- think times ------------------------------------------------------------


def test_back_to_back_gap_is_zero():
    s = IoStream.build([ev("open", 0, 100 * MS, path="f"), ev("close", 100 * MS, 120 * MS)])
    assert derive_think_times(s).gaps[(1, 1)] == (0,)


def test_gap_50ms():
    s = IoStream.build([ev("open", 0, 100 * MS, path="f"), ev("close", 150 * MS, 151 * MS)])
    assert derive_think_times(s).gaps[(1, 1)] == (150 * MS - 100 * MS,)


def test_single_event_thread_has_no_gaps():
    s = IoStream.build([ev("open", 0, 5, path="f")])
    assert derive_think_times(s).gaps[(1, 1)] == ()


# -- characterize -----------------------------------------------------------


def test_homogeneous_reads():
    events = [ev("read", i * 10, i * 10 + 5, nbytes=100) for i in range(10)]
    p = characterize(events)
    assert p["read"].fraction == 1.0
    assert p["read"].mean_bytes == 100
    assert p["read"].total_bytes == 1000


def test_mixed_three_events():
    events = [ev("read", 0, 1, nbytes=10), ev("write", 2, 3, nbytes=20), ev("lseek", 4, 5, offset=0)]
    p = characterize(events)
    for k in ("read", "write", "lseek"):
        assert p[k].fraction == pytest.approx(1 / 3)
    assert (p["read"].total_bytes, p["write"].total_bytes) == (10, 20)
    assert p["lseek"].mean_bytes is None


def test_characterize_empty():
    with pytest.raises(EmptyTrace):
        characterize(IoStream.build([]))


# -- serialization ----------------------------------------------------------


def test_empty_stream_is_header_only():
    text = serialize_trace(IoStream.build([])).decode()
    assert [l for l in text.splitlines() if not l.startswith("#")] == [HEADER]
    assert parse_trace(text) == IoStream.build([])


def test_one_event_round_trip():
    s = IoStream.build([ev("open", 3, 9, path='we,ird "name"', sid="#s,1")])
    assert parse_trace(serialize_trace(s)) == s


def test_ten_thousand_event_round_trip():
    s = random_stream(np.random.default_rng(5), 10_000)
    s.validate()
    assert parse_trace(serialize_trace(s)) == s
    assert parse_trace(serialize_trace(s), strict=True) == s


# -- properties -------------------------------------------------------------

names = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00\r\n\x0b\x0c\x1c\x1d\x1e\x85  "), max_size=12)


@st.composite
def raw_events(draw):
    sid = draw(names)
    n = draw(st.integers(0, 40))
    out = []
    for _ in range(n):
        op = draw(st.sampled_from(list(OpKind)))
        t0 = draw(st.integers(0, 10_000))
        kw = {"fd": draw(st.integers(0, 6))}
        if op is OpKind.OPEN:
            kw["path"] = draw(names)
        elif op is OpKind.LSEEK:
            kw["offset"] = draw(st.integers(0, 2**62))
        elif op in (OpKind.READ, OpKind.WRITE):
            kw["nbytes"] = draw(st.integers(0, 2**40))
        tid = draw(st.integers(0, 3))
        out.append(ev(op, t0, t0 + draw(st.integers(0, 500)), tid=tid, pid=draw(st.integers(0, 1)), sid=sid, **kw))
    return sid, out


@settings(max_examples=200, deadline=None)
@given(raw_events())
def test_round_trip_property(data):
    sid, events = data
    s = IoStream.build(events, stream_id=sid)
    back = parse_trace(serialize_trace(s))
    if events:
        assert back == s
    else:
        assert back.events == ()


@settings(max_examples=200, deadline=None)
@given(raw_events())
def test_stream_invariants_after_repair(data):
    sid, events = data
    s = IoStream.build(events, stream_id=sid)
    s.validate()
    # threads are a disjoint cover of events
    flat = [e for evs in s.threads.values() for e in evs]
    assert sorted(map(id, flat)) == sorted(map(id, s.events))
    for evs in s.threads.values():
        for a, b in zip(evs, evs[1:]):
            assert a.t_end <= b.t_start


@settings(max_examples=200, deadline=None)
@given(raw_events())
def test_think_time_accounting(data):
    sid, events = data
    s = IoStream.build(events, stream_id=sid)
    prof = derive_think_times(s)
    for key, evs in s.threads.items():
        gaps = prof.gaps[key]
        assert len(gaps) == len(evs) - 1
        assert all(g >= 0 for g in gaps)
        busy = sum(e.response_time for e in evs[1:])
        assert sum(gaps) + busy == evs[-1].t_end - evs[0].t_end
        # equivalently: first response time + gaps + rest = total span
        assert evs[0].response_time + sum(gaps) + busy == evs[-1].t_end - evs[0].t_start


@settings(max_examples=100, deadline=None)
@given(raw_events())
def test_profile_fractions_sum_to_one(data):
    sid, events = data
    if not events:
        return
    s = IoStream.build(events, stream_id=sid)
    p = characterize(s)
    assert abs(sum(k.fraction for k in p.kinds.values()) - 1) <= 1e-9
    assert sum(k.count for k in p.kinds.values()) == len(s)
    for kind, kp in p.kinds.items():
        assert kp.total_bytes == sum(e.nbytes or 0 for e in s.events if e.op is kind)


def test_event_rejects_bad_fields():
    with pytest.raises(SchemaViolation):
        TraceEvent(stream_id="s", pid=1, tid=1, op=OpKind.READ, t_start=0, t_end=1, fd=3)
    with pytest.raises(SchemaViolation):
        TraceEvent(stream_id="s", pid=1, tid=1, op=OpKind.OPEN, t_start=0, t_end=1, fd=3, path="a\nb")


def test_thread_events_helper_is_valid():
    s = IoStream.build(thread_events([("lseek", 10), ("read", 4)]), strict=True)
    s.validate()
