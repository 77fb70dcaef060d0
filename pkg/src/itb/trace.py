"""Canonical trace model: events, per-thread streams, the text format.

A trace file looks like::

    itb-trace v1
    # stream_id,pid,tid,op,arg,offset,nbytes,t_start_ns,t_end_ns
    s0,100,101,open,"3:db/data000",,,0,2000
    s0,100,101,lseek,3,65536,,2500,2600
    s0,100,101,write,3,,8192,3000,90000

``arg`` is the fd for every op except ``open``, where it is a quoted
``<fd>:<path>`` pair (the fd an open returned has no other column).
Lseek offsets are absolute (SEEK_SET).  Read and write offsets are not
recorded; the file position is implicit state that lseek resets and
read/write advance.
"""

from __future__ import annotations

import csv
import enum
import io
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import (
    EmptyTrace,
    MalformedLine,
    NonMonotoneThread,
    OrphanDescriptor,
    SchemaViolation,
)

HEADER = "itb-trace v1"
COLUMNS = "stream_id,pid,tid,op,arg,offset,nbytes,t_start_ns,t_end_ns"


class OpKind(str, enum.Enum):
    OPEN = "open"
    CLOSE = "close"
    READ = "read"
    WRITE = "write"
    LSEEK = "lseek"
    META = "meta"

    def __str__(self):
        return self.value


DATA_OPS = (OpKind.READ, OpKind.WRITE)

ThreadKey = tuple  # (pid, tid)


def _schema_problem(ev: "TraceEvent") -> tuple[str, str] | None:
    """Return (field, reason) for the first field-presence violation."""
    op = ev.op
    if ev.t_start < 0:
        return "t_start", "negative"
    if ev.t_end < ev.t_start:
        return "t_end", "ends before it starts"
    for name in ("stream_id", "path"):
        v = getattr(ev, name)
        if v is not None and ("\n" in v or "\r" in v):
            return name, "contains a line break"
        if v is not None and "\0" in v:
            return name, "contains NUL"
    if op is not OpKind.META and ev.fd is None:
        return "fd", "required"
    if ev.fd is not None and ev.fd < 0:
        return "fd", "negative"
    if (op is OpKind.OPEN) != (ev.path is not None):
        return "path", "present only for open"
    if (op is OpKind.LSEEK) != (ev.offset is not None):
        return "offset", "present only for lseek"
    if (op in DATA_OPS) != (ev.nbytes is not None):
        return "nbytes", "present only for read/write"
    if ev.offset is not None and ev.offset < 0:
        return "offset", "negative"
    if ev.nbytes is not None and ev.nbytes < 0:
        return "nbytes", "negative"
    return None


@dataclass(frozen=True, slots=True, kw_only=True)
class TraceEvent:
    stream_id: str
    pid: int
    tid: int
    op: OpKind
    t_start: int
    t_end: int
    fd: int | None = None
    path: str | None = None
    offset: int | None = None
    nbytes: int | None = None

    def __post_init__(self):
        if not isinstance(self.op, OpKind):
            object.__setattr__(self, "op", OpKind(self.op))
        problem = _schema_problem(self)
        if problem is not None:
            raise SchemaViolation(None, *problem)

    @property
    def response_time(self) -> int:
        return self.t_end - self.t_start

    @property
    def thread(self) -> ThreadKey:
        return (self.pid, self.tid)


@dataclass(frozen=True)
class IoStream:
    """Events of one recorded application run, globally ordered by start time.

    Use :meth:`build` for raw input; the constructor assumes the events
    already satisfy the ordering, non-overlap and fd invariants.
    """

    stream_id: str
    events: tuple[TraceEvent, ...]
    threads: Mapping[ThreadKey, tuple[TraceEvent, ...]] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        groups: dict[ThreadKey, list[TraceEvent]] = defaultdict(list)
        for ev in events:
            groups[ev.thread].append(ev)
        object.__setattr__(self, "threads", MappingProxyType({k: tuple(v) for k, v in groups.items()}))

    def __len__(self):
        return len(self.events)

    @classmethod
    def build(
        cls,
        events: Sequence[TraceEvent],
        *,
        stream_id: str | None = None,
        strict: bool = False,
        line_nos: Sequence[int] | None = None,
    ) -> "IoStream":
        """Order, repair and validate raw events.

        Overlapping events of one thread get their start clamped to the
        previous end; an fd with no live open gets a synthetic open of
        ``orphan-<fd>`` just before its first use.  ``strict`` turns both
        repairs into errors.
        """
        events = list(events)
        if line_nos is None:
            line_nos = range(1, len(events) + 1)
        ids = {ev.stream_id for ev in events}
        if stream_id is None:
            stream_id = events[0].stream_id if events else ""
        if ids - {stream_id}:
            bad = next(i for i, ev in enumerate(events) if ev.stream_id != stream_id)
            raise SchemaViolation(line_nos[bad], "stream_id", "one stream per trace")

        order = sorted(range(len(events)), key=lambda i: (events[i].t_start, i))
        by_thread: dict[ThreadKey, list[int]] = defaultdict(list)
        for i in order:
            by_thread[events[i].thread].append(i)
        for key, idxs in by_thread.items():
            prev_end = None
            for j, i in enumerate(idxs):
                ev = events[i]
                if prev_end is not None and ev.t_start < prev_end:
                    if strict:
                        raise NonMonotoneThread(key[1], j)
                    ev = replace(ev, t_start=prev_end, t_end=max(ev.t_end, prev_end))
                    events[i] = ev
                prev_end = ev.t_end
        rank = {i: r for r, i in enumerate(order)}
        order.sort(key=lambda i: (events[i].t_start, rank[i]))

        live: dict[int, set[int]] = defaultdict(set)
        out: list[TraceEvent] = []
        for i in order:
            ev = events[i]
            fds = live[ev.pid]
            if ev.op is OpKind.OPEN:
                fds.add(ev.fd)
            elif ev.fd is not None and ev.fd not in fds:
                if strict:
                    raise OrphanDescriptor(line_nos[i], ev.fd)
                out.append(
                    TraceEvent(
                        stream_id=ev.stream_id,
                        pid=ev.pid,
                        tid=ev.tid,
                        op=OpKind.OPEN,
                        fd=ev.fd,
                        path=f"orphan-{ev.fd}",
                        t_start=ev.t_start,
                        t_end=ev.t_start,
                    )
                )
                fds.add(ev.fd)
            if ev.op is OpKind.CLOSE:
                fds.discard(ev.fd)
            out.append(ev)
        return cls(stream_id, tuple(out))

    def validate(self) -> None:
        """Raise if any stream invariant does not hold."""
        self.build(self.events, stream_id=self.stream_id, strict=True)
        for i in range(1, len(self.events)):
            if self.events[i].t_start < self.events[i - 1].t_start:
                raise NonMonotoneThread(self.events[i].tid, i)

    @property
    def t_first(self) -> int:
        return self.events[0].t_start if self.events else 0

    @property
    def t_last(self) -> int:
        return max((ev.t_end for ev in self.events), default=0)

    def relabel(self, stream_id: str) -> "IoStream":
        return IoStream(stream_id, tuple(replace(ev, stream_id=stream_id) for ev in self.events))

    def paths(self) -> set[str]:
        return {ev.path for ev in self.events if ev.op is OpKind.OPEN}


# ---------------------------------------------------------------------------
# text format


def _quote(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


def _plain(s: str) -> str:
    if s.startswith("#") or any(c in s for c in ',"') or s != s.strip():
        return _quote(s)
    return s


def _opt(v) -> str:
    return "" if v is None else str(v)


def format_event(ev: TraceEvent) -> str:
    if ev.op is OpKind.OPEN:
        arg = _quote(f"{ev.fd}:{ev.path}")
    else:
        arg = _opt(ev.fd)
    return ",".join(
        (
            _plain(ev.stream_id),
            str(ev.pid),
            str(ev.tid),
            ev.op.value,
            arg,
            _opt(ev.offset),
            _opt(ev.nbytes),
            str(ev.t_start),
            str(ev.t_end),
        )
    )


def serialize_trace(stream: IoStream) -> bytes:
    lines = [HEADER, "# " + COLUMNS]
    lines.extend(format_event(ev) for ev in stream.events)
    return ("\n".join(lines) + "\n").encode("utf-8")


_OPS = {k.value: k for k in OpKind}


def _int(line_no, text, name, *, optional=False):
    if text == "":
        if optional:
            return None
        raise SchemaViolation(line_no, name, "required")
    try:
        return int(text)
    except ValueError:
        raise MalformedLine(line_no, f"{name} is not an integer: {text!r}") from None


def parse_event(line_no: int, row: list[str]) -> TraceEvent:
    if len(row) != 9:
        raise MalformedLine(line_no, f"expected 9 fields, got {len(row)}")
    sid, pid, tid, op_name, arg, off, nb, ts, te = row
    op = _OPS.get(op_name.strip().lower())
    if op is None:
        raise SchemaViolation(line_no, "op", f"unknown op {op_name!r}")
    fd = path = None
    if op is OpKind.OPEN:
        fd_text, sep, path = arg.partition(":")
        if not sep:
            raise SchemaViolation(line_no, "path", "open needs '<fd>:<path>'")
        fd = _int(line_no, fd_text, "fd")
    else:
        fd = _int(line_no, arg, "fd", optional=op is OpKind.META)
    offset = _int(line_no, off, "offset", optional=True)
    nbytes = _int(line_no, nb, "nbytes", optional=True)
    if op is OpKind.LSEEK and offset is None:
        raise SchemaViolation(line_no, "offset", "required for lseek")
    if op in DATA_OPS and nbytes is None:
        raise SchemaViolation(line_no, "nbytes", f"required for {op.value}")
    try:
        return TraceEvent(
            stream_id=sid,
            pid=_int(line_no, pid, "pid"),
            tid=_int(line_no, tid, "tid"),
            op=op,
            fd=fd,
            path=path,
            offset=offset,
            nbytes=nbytes,
            t_start=_int(line_no, ts, "t_start"),
            t_end=_int(line_no, te, "t_end"),
        )
    except SchemaViolation as e:
        raise SchemaViolation(line_no, e.field, e.reason) from None


def parse_trace(data: bytes | str, *, strict: bool = False) -> IoStream:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    events: list[TraceEvent] = []
    line_nos: list[int] = []
    seen_header = False
    for line_no, raw in enumerate(data.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header:
            if line != HEADER:
                raise MalformedLine(line_no, f"expected header {HEADER!r}")
            seen_header = True
            continue
        try:
            row = next(csv.reader([line], strict=True))
        except (csv.Error, StopIteration) as e:
            raise MalformedLine(line_no, str(e)) from None
        events.append(parse_event(line_no, row))
        line_nos.append(line_no)
    if not seen_header:
        raise MalformedLine(1, f"expected header {HEADER!r}")
    return IoStream.build(events, strict=strict, line_nos=line_nos)


def load_trace(path: str | os.PathLike, *, strict: bool = False) -> IoStream:
    with open(path, "rb") as f:
        return parse_trace(f.read(), strict=strict)


def dump_trace(stream: IoStream, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(serialize_trace(stream))


# ---------------------------------------------------------------------------
# derived quantities


@dataclass(frozen=True)
class ThinkTimeProfile:
    """End-to-start gaps between consecutive ops of each thread, in ns."""

    gaps: Mapping[ThreadKey, tuple[int, ...]]

    def total(self) -> int:
        return sum(sum(g) for g in self.gaps.values())

    def all_gaps(self) -> list[int]:
        return [g for gs in self.gaps.values() for g in gs]


def derive_think_times(stream: IoStream) -> ThinkTimeProfile:
    gaps = {}
    for key, evs in stream.threads.items():
        gaps[key] = tuple(b.t_start - a.t_end for a, b in zip(evs, evs[1:]))
    return ThinkTimeProfile(MappingProxyType(gaps))


@dataclass(frozen=True)
class KindProfile:
    count: int
    fraction: float
    total_bytes: int
    mean_bytes: float | None  # read/write only


@dataclass(frozen=True)
class WorkloadProfile:
    n_events: int
    kinds: Mapping[OpKind, KindProfile]

    def __getitem__(self, kind) -> KindProfile:
        return self.kinds[OpKind(kind)]

    def fractions(self) -> dict[OpKind, float]:
        return {k: p.fraction for k, p in self.kinds.items()}


def characterize(stream: IoStream | Iterable[TraceEvent]) -> WorkloadProfile:
    events = stream.events if isinstance(stream, IoStream) else list(stream)
    if not events:
        raise EmptyTrace("cannot characterize an empty trace")
    counts = dict.fromkeys(OpKind, 0)
    totals = dict.fromkeys(OpKind, 0)
    for ev in events:
        counts[ev.op] += 1
        if ev.nbytes is not None:
            totals[ev.op] += ev.nbytes
    n = len(events)
    kinds = {}
    for k in OpKind:
        mean = None
        if k in DATA_OPS and counts[k]:
            mean = totals[k] / counts[k]
        kinds[k] = KindProfile(counts[k], counts[k] / n, totals[k], mean)
    return WorkloadProfile(n, MappingProxyType(kinds))


def format_profile(profile: WorkloadProfile) -> str:
    out = io.StringIO()
    out.write(f"{'op':<6} {'count':>9} {'distr':>8} {'avg size':>10} {'total':>14}\n")
    for k, p in profile.kinds.items():
        mean = "" if p.mean_bytes is None else f"{p.mean_bytes:.0f}"
        total = str(p.total_bytes) if k in DATA_OPS else ""
        out.write(f"{k.value:<6} {p.count:>9} {p.fraction * 100:>7.3f}% {mean:>10} {total:>14}\n")
    return out.getvalue()
