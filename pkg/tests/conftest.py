import os
import tempfile
from pathlib import Path

import pytest

from itb.trace import IoStream, OpKind, TraceEvent

ACCEPTANCE_RESULTS = {}


def ev(op, t0, t1, fd=3, tid=1, pid=1, sid="s", **kw):
    return TraceEvent(stream_id=sid, pid=pid, tid=tid, op=OpKind(op), t_start=t0, t_end=t1, fd=fd, **kw)


def thread_events(ops, tid=1, pid=1, sid="s", fd=3, path="f", t=0, gap=0, lat=10):
    """Events for one thread: open, then ``ops`` (tuples), then close."""
    out = [ev("open", t, t + lat, fd=fd, tid=tid, pid=pid, sid=sid, path=path)]
    t += lat
    for op in ops:
        t += gap
        kind, arg = op if isinstance(op, tuple) else (op, None)
        kw = {}
        if kind == "lseek":
            kw["offset"] = arg
        elif kind in ("read", "write"):
            kw["nbytes"] = arg
        out.append(ev(kind, t, t + lat, fd=fd, tid=tid, pid=pid, sid=sid, **kw))
        t += lat
    out.append(ev("close", t + gap, t + gap + lat, fd=fd, tid=tid, pid=pid, sid=sid))
    return out


def random_stream(rng, n, sid="r"):
    """Random valid stream built through the repair path."""
    events = []
    n_threads = int(rng.integers(1, 6))
    for _ in range(n):
        tid = int(rng.integers(0, n_threads))
        op = OpKind(rng.choice(["open", "close", "read", "write", "lseek", "meta"]))
        t0 = int(rng.integers(0, 10 * n + 1))
        kw = dict(fd=int(rng.integers(0, 8)))
        if op is OpKind.OPEN:
            kw["path"] = f"d/f{int(rng.integers(0, 5))}"
        elif op is OpKind.LSEEK:
            kw["offset"] = int(rng.integers(0, 1 << 40))
        elif op in (OpKind.READ, OpKind.WRITE):
            kw["nbytes"] = int(rng.integers(0, 1 << 20))
        elif op is OpKind.META and rng.random() < 0.3:
            kw["fd"] = None
        events.append(ev(op, t0, t0 + int(rng.integers(0, 50)), tid=tid, pid=int(tid % 2), sid=sid, **kw))
    return IoStream.build(events)


@pytest.fixture
def tmpfs_dir():
    """A scratch directory, on tmpfs when the host has /dev/shm."""
    base = "/dev/shm" if os.path.isdir("/dev/shm") and os.access("/dev/shm", os.W_OK) else None
    with tempfile.TemporaryDirectory(prefix="itb-", dir=base) as d:
        yield Path(d)


@pytest.fixture
def criterion(request):
    """Record an acceptance criterion outcome for the end-of-run summary."""

    def record(cid, passed, detail=""):
        ACCEPTANCE_RESULTS[cid] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS, key=lambda c: int(c.split(".")[0])):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid}: {detail}")
