"""Replay traces against a mounted filesystem.

One worker per recorded (pid, tid) issues that thread's operations in
trace order, sleeping the recorded think time between them.  Workers do
not synchronize with each other; each stream starts at its own offset
from the common run start.
"""

from __future__ import annotations

import csv
import errno
import json
import logging
import multiprocessing
import os
import shutil
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distsim import fnv1a64
from .errors import (
    ClockSkew,
    InsufficientSpace,
    InvalidPlan,
    PermissionDenied,
    TargetIoError,
)
from .offsets import load_or_create_offsets, uniform_start_offsets
from .trace import IoStream, OpKind, TraceEvent

log = logging.getLogger(__name__)

LOG_HEADER = "stream_id,pid,tid,op,bytes,scheduled_start_ns,actual_start_ns,latency_ns,wall_epoch_ns"
_CHUNK = 1 << 20


@dataclass(frozen=True)
class Pacing:
    mode: str = "full"  # full | scaled | fast
    factor: float = 1.0

    def __post_init__(self):
        if self.mode not in ("full", "scaled", "fast"):
            raise InvalidPlan(f"unknown pacing {self.mode!r}")
        if self.factor < 0:
            raise InvalidPlan("pacing factor must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Pacing":
        text = text.strip().lower()
        if text in ("full", "fast"):
            return cls(text)
        name, _, val = text.partition(":")
        if name in ("scale", "scaled") and val:
            try:
                return cls("scaled", float(val))
            except ValueError:
                pass
        raise InvalidPlan(f"bad pacing {text!r}; expected full, fast or scale:<f>")

    def scale(self, ns: int) -> int:
        if self.mode == "fast":
            return 0
        if self.mode == "scaled":
            return round(ns * self.factor)
        return ns

    def __str__(self):
        return f"scale:{self.factor:g}" if self.mode == "scaled" else self.mode


@dataclass
class ReplayPlan:
    streams: list[tuple[IoStream, int]]
    target_root: Path
    sync_writes: bool = False
    pacing: Pacing = field(default_factory=Pacing)
    seed: int = 0
    strict: bool = False
    max_workers: int = 256
    process_per_pid: bool = False
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_root = Path(self.target_root)
        self.streams = [(s, int(off)) for s, off in self.streams]
        for s, off in self.streams:
            if off < 0:
                raise InvalidPlan(f"stream {s.stream_id}: negative start offset")
            if len(s.threads) > self.max_workers:
                raise InvalidPlan(f"stream {s.stream_id} has {len(s.threads)} threads, cap is {self.max_workers}")
        ids = [s.stream_id for s, _ in self.streams]
        if len(set(ids)) != len(ids):
            raise InvalidPlan("stream ids in one plan must be distinct; relabel copies")

    @classmethod
    def randomized(cls, streams: Sequence[IoStream], target_root, seed: int = 0, sidecar=None, **kw) -> "ReplayPlan":
        """Plan with start offsets uniform on [0, 300 s], reused from ``sidecar`` if present."""
        if sidecar is not None:
            offsets = load_or_create_offsets(sidecar, len(streams), seed)
        else:
            offsets = uniform_start_offsets(len(streams), seed)
        return cls(list(zip(streams, offsets)), target_root, seed=seed, **kw)

    def echo(self) -> dict:
        return {
            "n_streams": len(self.streams),
            "pacing": str(self.pacing),
            "sync_writes": self.sync_writes,
            "seed": self.seed,
            **self.config,
        }


# ---------------------------------------------------------------------------
# tree preparation


def resolve_path(root: Path, path: str) -> Path:
    """Place a recorded path under ``root``; leading '/' is dropped."""
    parts = [p for p in PurePosixPath(path).parts if p != "/"]
    if not parts or ".." in parts:
        raise PermissionDenied(path, "path escapes the target root")
    return root.joinpath(*parts)


def required_sizes(streams: Iterable[IoStream]) -> dict[str, int]:
    """Per path, the largest byte position any stream reaches on it."""
    need: dict[str, int] = {}
    for stream in streams:
        files: dict[tuple[int, int], str] = {}
        pos: dict[tuple[int, int], int] = {}
        for ev in stream.events:
            key = (ev.pid, ev.fd)
            if ev.op is OpKind.OPEN:
                files[key] = ev.path
                pos[key] = 0
                need.setdefault(ev.path, 0)
                continue
            path = files.get(key)
            if path is None:
                continue
            if ev.op is OpKind.CLOSE:
                del files[key]
            elif ev.op is OpKind.LSEEK:
                pos[key] = ev.offset
                need[path] = max(need[path], ev.offset)
            elif ev.op in (OpKind.READ, OpKind.WRITE):
                pos[key] += ev.nbytes
                need[path] = max(need[path], pos[key])
    return need


@dataclass(frozen=True)
class FilePopulation:
    root: Path
    sizes: Mapping[str, int]

    @property
    def total_bytes(self) -> int:
        return sum(self.sizes.values())


def _fill(path: Path, size: int, seed: int, key: str) -> None:
    rng = np.random.default_rng([seed, fnv1a64(key)])
    with open(path, "wb") as f:
        left = size
        while left:
            n = min(left, _CHUNK)
            f.write(rng.bytes(n))
            left -= n


def prepare_tree(plan: ReplayPlan) -> FilePopulation:
    """Create every opened file under the target root, filled with seeded random bytes."""
    root = plan.target_root
    sizes = required_sizes(s for s, _ in plan.streams)
    targets = {p: resolve_path(root, p) for p in sizes}
    try:
        root.mkdir(parents=True, exist_ok=True)
        existing = sum(t.stat().st_size for t in targets.values() if t.is_file())
        free = shutil.disk_usage(root).free + existing
        total = sum(sizes.values())
        if total > free:
            raise InsufficientSpace(total, free)
        for p, size in sorted(sizes.items()):
            targets[p].parent.mkdir(parents=True, exist_ok=True)
            _fill(targets[p], size, plan.seed, p)
    except PermissionError as e:
        raise PermissionDenied(e.filename or str(root)) from e
    except OSError as e:
        if e.errno == errno.ENOSPC:
            raise InsufficientSpace(sum(sizes.values()), shutil.disk_usage(root).free) from e
        raise
    return FilePopulation(root, sizes)


# ---------------------------------------------------------------------------
# the log


@dataclass(frozen=True)
class LogEntry:
    stream_id: str
    pid: int
    tid: int
    op: OpKind
    bytes: int
    scheduled_start_ns: int
    actual_start_ns: int
    latency_ns: int
    wall_epoch_ns: int

    @property
    def end_ns(self) -> int:
        return self.actual_start_ns + self.latency_ns


@dataclass(frozen=True)
class ReplayIssue:
    """A failed op ("error") or a read that hit EOF early ("short")."""

    kind: str
    stream_id: str
    pid: int
    tid: int
    index: int
    op: OpKind
    detail: str


def _cell(text: str) -> str:
    if any(c in text for c in ',"\r\n') or text.startswith("#"):
        return '"' + text.replace('"', '""') + '"'
    return text


@dataclass
class ReplayLog:
    entries: list[LogEntry]
    issues: list[ReplayIssue] = field(default_factory=list)
    wall_epoch_ns: int = 0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def by_thread(self) -> dict[tuple[str, int, int], list[LogEntry]]:
        out = defaultdict(list)
        for e in self.entries:
            out[(e.stream_id, e.pid, e.tid)].append(e)
        return dict(out)

    def to_csv(self) -> str:
        lines = [
            "# itb-replay-log v1",
            f"# wall_epoch_ns={self.wall_epoch_ns}",
            "# config " + json.dumps(self.config, sort_keys=True),
            LOG_HEADER,
        ]
        for e in self.entries:
            lines.append(
                f"{_cell(e.stream_id)},{e.pid},{e.tid},{e.op.value},{e.bytes},"
                f"{e.scheduled_start_ns},{e.actual_start_ns},{e.latency_ns},{e.wall_epoch_ns}"
            )
        for i in self.issues:
            detail = " ".join(i.detail.splitlines())
            lines.append(f"# issue,{i.kind},{_cell(i.stream_id)},{i.pid},{i.tid},{i.index},{i.op.value},{_cell(detail)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "ReplayLog":
        entries, issues, epoch, config = [], [], 0, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("wall_epoch_ns="):
                    epoch = int(body.split("=", 1)[1])
                elif body.startswith("config "):
                    config = json.loads(body[len("config "):])
                elif body.startswith("issue,"):
                    _, kind, sid, pid, tid, idx, op, detail = next(csv.reader([body]))
                    issues.append(ReplayIssue(kind, sid, int(pid), int(tid), int(idx), OpKind(op), detail))
                continue
            if line == LOG_HEADER:
                continue
            parts = next(csv.reader([line]))
            if len(parts) != 9:
                raise ValueError(f"replay log row has {len(parts)} fields: {line!r}")
            sid, pid, tid, op, *nums = parts
            entries.append(LogEntry(sid, int(pid), int(tid), OpKind(op), *map(int, nums)))
        return cls(entries, issues, epoch, config)

    @classmethod
    def read(cls, path) -> "ReplayLog":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def pacing_violations(log: ReplayLog, plan: ReplayPlan, tolerance_ns: int = 2_000_000) -> list[tuple]:
    """Consecutive op pairs of a thread that started closer than the paced gap allows.

    Each item is (stream_id, pid, tid, index, observed_ns, required_ns).
    """
    out = []
    streams = {s.stream_id: s for s, _ in plan.streams}
    for (sid, pid, tid), entries in log.by_thread().items():
        events = streams[sid].threads[(pid, tid)]
        for i in range(1, min(len(entries), len(events))):
            gap = plan.pacing.scale(events[i].t_start - events[i - 1].t_end)
            seen = entries[i].actual_start_ns - entries[i - 1].actual_start_ns
            if seen < gap - tolerance_ns:
                out.append((sid, pid, tid, i, seen, gap))
    return out


# ---------------------------------------------------------------------------
# workers


def _sleep_until(deadline_ns: int) -> None:
    while True:
        left = deadline_ns - time.monotonic_ns()
        if left <= 0:
            return
        time.sleep(left / 1e9)


class _Worker:
    def __init__(self, plan: ReplayPlan, stream: IoStream, offset: int, key, events, index: int):
        self.plan = plan
        self.stream = stream
        self.offset = offset
        self.pid, self.tid = key
        self.events = events
        self.entries: list[tuple] = []
        self.issues: list[ReplayIssue] = []
        self.failure: BaseException | None = None
        self.fds: dict[int, int] = {}
        biggest = max((ev.nbytes for ev in events if ev.op is OpKind.WRITE), default=0)
        rng = np.random.default_rng([plan.seed, index, fnv1a64(stream.stream_id), self.tid & 0xFFFFFFFF])
        self.buf = memoryview(rng.bytes(biggest))

    def _issue(self, kind, index, ev, detail):
        self.issues.append(ReplayIssue(kind, self.stream.stream_id, self.pid, self.tid, index, ev.op, detail))

    def _execute(self, ev: TraceEvent) -> int:
        op = ev.op
        if op is OpKind.OPEN:
            flags = os.O_RDWR | os.O_CREAT
            if self.plan.sync_writes:
                flags |= os.O_SYNC
            path = resolve_path(self.plan.target_root, ev.path)
            old = self.fds.pop(ev.fd, None)
            if old is not None:
                os.close(old)
            self.fds[ev.fd] = os.open(path, flags, 0o644)
            return 0
        if op is OpKind.META and ev.fd is None:
            os.stat(self.plan.target_root)
            return 0
        real = self.fds.get(ev.fd)
        if real is None:
            raise OSError(errno.EBADF, f"fd {ev.fd} not open in replay")
        if op is OpKind.CLOSE:
            del self.fds[ev.fd]
            os.close(real)
            return 0
        if op is OpKind.LSEEK:
            os.lseek(real, ev.offset, os.SEEK_SET)
            return 0
        if op is OpKind.META:
            os.fstat(real)
            return 0
        if op is OpKind.READ:
            got = 0
            while got < ev.nbytes:
                chunk = os.read(real, ev.nbytes - got)
                if not chunk:
                    break
                got += len(chunk)
            return got
        done = 0
        while done < ev.nbytes:
            done += os.write(real, self.buf[done : ev.nbytes])
        return done

    def run(self, t0: int, epoch: int, cancel: threading.Event) -> None:
        pacing = self.plan.pacing
        first_t = self.stream.t_first
        last_seen = t0
        prev_end_actual = None
        try:
            for i, ev in enumerate(self.events):
                if cancel.is_set():
                    break
                if prev_end_actual is None:
                    sched = t0 + self.offset + pacing.scale(ev.t_start - first_t)
                else:
                    sched = prev_end_actual + pacing.scale(ev.t_start - self.events[i - 1].t_end)
                _sleep_until(sched)
                start = time.monotonic_ns()
                if start < last_seen:
                    raise ClockSkew(f"monotonic clock went back by {last_seen - start} ns")
                moved = 0
                try:
                    moved = self._execute(ev)
                except OSError as e:
                    end = time.monotonic_ns()
                    self._issue("error", i, ev, str(e))
                    self.entries.append(self._row(ev, 0, sched, start, end, t0, epoch))
                    if self.plan.strict:
                        raise TargetIoError(i, e) from e
                    prev_end_actual = last_seen = end
                    continue
                end = time.monotonic_ns()
                if ev.nbytes is not None and moved != ev.nbytes:
                    self._issue("short", i, ev, f"moved {moved} of {ev.nbytes} bytes")
                self.entries.append(self._row(ev, moved, sched, start, end, t0, epoch))
                prev_end_actual = last_seen = end
        except BaseException as e:  # noqa: BLE001 - handed back to the coordinator
            self.failure = e
            cancel.set()
        finally:
            for real in self.fds.values():
                try:
                    os.close(real)
                except OSError:
                    pass
            self.fds.clear()

    def _row(self, ev, moved, sched, start, end, t0, epoch):
        return (self.stream.stream_id, self.pid, self.tid, ev.op.value, moved, sched - t0, start - t0, end - start, epoch)


def _workers(plan: ReplayPlan) -> list[_Worker]:
    out = []
    for si, (stream, offset) in enumerate(plan.streams):
        for key, events in stream.threads.items():
            out.append(_Worker(plan, stream, offset, key, events, si))
    return out


def _run_threads(workers: Sequence[_Worker], t0: int, epoch: int, cancel: threading.Event) -> None:
    threads = [
        threading.Thread(target=w.run, args=(t0, epoch, cancel), name=f"replay-{w.stream.stream_id}-{w.tid}", daemon=True)
        for w in workers
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def _process_main(workers, t0, epoch, queue):
    cancel = threading.Event()
    _run_threads(workers, t0, epoch, cancel)
    queue.put([(w.entries, w.issues, repr(w.failure) if w.failure else None) for w in workers])


def replay(plan: ReplayPlan, cancel: threading.Event | None = None, lead_ns: int = 5_000_000) -> ReplayLog:
    """Run the plan; call :func:`prepare_tree` first.

    I/O errors are logged as issues and the run continues, unless the plan
    is strict, in which case the first one cancels all workers and raises
    :class:`TargetIoError`.
    """
    cancel = cancel or threading.Event()
    workers = _workers(plan)
    epoch = time.time_ns()
    t0 = time.monotonic_ns() + lead_ns
    if plan.process_per_pid:
        groups = defaultdict(list)
        for w in workers:
            groups[(w.stream.stream_id, w.pid)].append(w)
        ctx = multiprocessing.get_context("fork")
        procs = []
        for ws in groups.values():
            q = ctx.Queue()
            p = ctx.Process(target=_process_main, args=(ws, t0, epoch, q), daemon=True)
            p.start()
            procs.append((p, q, ws))
        for p, q, ws in procs:
            results = q.get()
            p.join()
            for w, (entries, issues, failure) in zip(ws, results):
                w.entries, w.issues = entries, issues
                if failure and plan.strict:
                    w.failure = TargetIoError(-1, failure)
    else:
        _run_threads(workers, t0, epoch, cancel)

    for w in workers:
        if w.failure is not None:
            raise w.failure
    rows = []
    for wi, w in enumerate(workers):
        rows.extend((r[6], wi, seq, r) for seq, r in enumerate(w.entries))
    rows.sort(key=lambda x: x[:3])
    entries = [
        LogEntry(sid, pid, tid, OpKind(op), b, s, a, lat, ep) for _, _, _, (sid, pid, tid, op, b, s, a, lat, ep) in rows
    ]
    issues = [i for w in workers for i in w.issues]
    if issues:
        log.warning("replay finished with %d issues", len(issues))
    return ReplayLog(entries, issues, epoch, plan.echo())
