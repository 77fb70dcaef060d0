"""Distribution-function simulation: which OSDs each access hits, per second.

For every second of the (superimposed) trace and each of read/write we
count how often each OSD is touched, giving an OSD pattern.  The load
balance of a placement policy is scored by the population standard
deviation of each pattern, averaged over the trace.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, PositionUnderflow
from .trace import DATA_OPS, IoStream, OpKind

NS_PER_S = 1_000_000_000
DEFAULT_THRESHOLD = 30

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 finalizer (Steele, Lea & Flood constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _M64
    return h


def stripe_hash(file_id, stripe: int, seed: int) -> int:
    """H(file, stripe, seed) = sm(sm(sm(seed) ^ fnv1a64(file)) ^ stripe)."""
    h = splitmix64(seed & _M64)
    h = splitmix64(h ^ fnv1a64(str(file_id)))
    return splitmix64(h ^ (stripe & _M64))


@dataclass(frozen=True)
class StripeConfig:
    stripe_size: int
    width: int
    policy: str = "round_robin"  # or "hashed"
    seed: int = 0

    def __post_init__(self):
        if self.stripe_size < 1:
            raise DomainError("stripe_size must be >= 1 byte")
        if self.width < 1:
            raise DomainError("stripe width must be >= 1")
        if self.policy not in ("round_robin", "hashed"):
            raise DomainError(f"unknown policy {self.policy!r}")

    def osd(self, file_id, stripe: int) -> int:
        if self.policy == "round_robin":
            return stripe % self.width
        return stripe_hash(file_id, stripe, self.seed) % self.width

    def describe(self) -> str:
        pol = "rr" if self.policy == "round_robin" else f"hash:{self.seed}"
        return f"stripe_size={self.stripe_size} width={self.width} policy={pol}"


def parse_policy(text: str) -> tuple[str, int]:
    """'rr' -> round robin; 'hash:<seed>' (or 'hash') -> hashed."""
    text = text.strip().lower()
    if text in ("rr", "round_robin", "round-robin"):
        return "round_robin", 0
    name, _, seed = text.partition(":")
    if name in ("hash", "hashed"):
        return "hashed", int(seed or 0)
    raise DomainError(f"unknown policy {text!r}")


def map_access(cfg: StripeConfig, file_id, offset: int, length: int) -> frozenset[int]:
    if offset < 0 or length < 1:
        raise DomainError("need offset >= 0 and length >= 1")
    first = offset // cfg.stripe_size
    last = (offset + length - 1) // cfg.stripe_size
    n = cfg.width
    if cfg.policy == "round_robin":
        if last - first + 1 >= n:
            return frozenset(range(n))
        return frozenset(j % n for j in range(first, last + 1))
    hit = set()
    for j in range(first, last + 1):
        hit.add(stripe_hash(file_id, j, cfg.seed) % n)
        if len(hit) == n:
            break
    return frozenset(hit)


@dataclass(frozen=True)
class OsdPattern:
    second: int
    op: OpKind
    counts: tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class AccessTable:
    """Read/write accesses of one stream under one stripe config.

    Per op: start time of each access event and, in CSR layout, the OSDs
    it touches (``indptr[i]:indptr[i+1]`` slices ``osds``).
    """

    width: int
    t_start: Mapping[OpKind, np.ndarray]
    indptr: Mapping[OpKind, np.ndarray]
    osds: Mapping[OpKind, np.ndarray]


def access_table(stream: IoStream, cfg: StripeConfig) -> AccessTable:
    times = defaultdict(list)
    ptr = {op: [0] for op in DATA_OPS}
    osds = defaultdict(list)
    files: dict[tuple[int, int], str] = {}
    pos: dict[tuple[int, int], int] = {}
    for ev in stream.events:
        key = (ev.pid, ev.fd)
        if ev.op is OpKind.OPEN:
            files[key] = ev.path
            pos[key] = 0
        elif ev.op is OpKind.CLOSE:
            files.pop(key, None)
            pos.pop(key, None)
        elif ev.op is OpKind.LSEEK:
            if ev.offset < 0:
                raise PositionUnderflow(f"lseek to {ev.offset} on fd {ev.fd}")
            pos[key] = ev.offset
        elif ev.op in DATA_OPS:
            p = pos.get(key, 0)
            if p < 0:
                raise PositionUnderflow(f"position {p} on fd {ev.fd}")
            if ev.nbytes > 0:
                hit = map_access(cfg, files.get(key, f"orphan-{ev.fd}"), p, ev.nbytes)
                times[ev.op].append(ev.t_start)
                osds[ev.op].extend(sorted(hit))
                ptr[ev.op].append(len(osds[ev.op]))
            pos[key] = p + ev.nbytes
    as_arr = lambda d: MappingProxyType({op: np.asarray(d[op], dtype=np.int64) for op in DATA_OPS})
    return AccessTable(cfg.width, as_arr(times), as_arr(ptr), as_arr(osds))


class PatternGrid:
    """Dense per-second OSD counts; superimpose streams with :meth:`add`."""

    def __init__(self, width: int):
        self.width = width
        self.counts = {op: np.zeros((0, width), dtype=np.int64) for op in DATA_OPS}
        self.events = {op: np.zeros(0, dtype=np.int64) for op in DATA_OPS}

    def _grow(self, op, n_seconds):
        have = len(self.events[op])
        if n_seconds > have:
            n = max(n_seconds, 2 * have)
            c = np.zeros((n, self.width), dtype=np.int64)
            c[:have] = self.counts[op]
            e = np.zeros(n, dtype=np.int64)
            e[:have] = self.events[op]
            self.counts[op], self.events[op] = c, e

    def add(self, table: AccessTable, offset_ns: int = 0) -> None:
        if table.width != self.width:
            raise DomainError("access table width differs from grid width")
        for op in DATA_OPS:
            t = table.t_start[op]
            if not len(t):
                continue
            sec = (t + offset_ns) // NS_PER_S
            self._grow(op, int(sec.max()) + 1)
            self.events[op] += np.bincount(sec, minlength=len(self.events[op]))
            per_event = np.diff(table.indptr[op])
            flat = np.repeat(sec, per_event) * self.width + table.osds[op]
            self.counts[op] += np.bincount(flat, minlength=self.counts[op].size).reshape(-1, self.width)

    def rows(self, op: OpKind) -> tuple[np.ndarray, np.ndarray]:
        """(seconds, counts) for the seconds in which ``op`` occurred."""
        present = np.flatnonzero(self.events[op])
        return present, self.counts[op][present]

    def patterns(self) -> list[OsdPattern]:
        out = []
        for op in DATA_OPS:
            secs, counts = self.rows(op)
            out.extend(OsdPattern(int(s), op, tuple(int(x) for x in c)) for s, c in zip(secs, counts))
        out.sort(key=lambda p: (p.second, p.op is OpKind.WRITE))
        return out


def build_patterns(
    streams: IoStream | Sequence[IoStream],
    cfg: StripeConfig,
    start_offsets: Sequence[int] | None = None,
) -> list[OsdPattern]:
    """OSD patterns of the superposition of ``streams``, each shifted by its offset.

    An access counts once per OSD it touches, in the second its op started.
    Seconds without any read (write) produce no read (write) pattern.
    """
    if isinstance(streams, IoStream):
        streams = [streams]
    if start_offsets is None:
        start_offsets = [0] * len(streams)
    if len(start_offsets) != len(streams):
        raise DomainError("need one start offset per stream")
    grid = PatternGrid(cfg.width)
    for s, off in zip(streams, start_offsets):
        if off < 0:
            raise DomainError("start offsets must be >= 0")
        grid.add(access_table(s, cfg), off)
    return grid.patterns()


def _counts(p) -> np.ndarray:
    return np.asarray(p.counts if isinstance(p, OsdPattern) else p, dtype=float)


def pattern_sigma(p, ddof: int = 0) -> float:
    """Standard deviation of a pattern's counts; population (divide by N) by default."""
    c = _counts(p)
    if len(c) - ddof < 1:
        return 0.0 if len(c) == 1 else math.nan
    return float(np.std(c, ddof=ddof))


def analytic_sigma(k: int, n: int, m: float) -> float:
    """Sigma of a pattern with ``k`` of ``n`` entries equal to ``m`` and the rest 0."""
    if n < 1 or k < 0 or k > n or m < 0:
        raise DomainError(f"need 0 <= k <= n, n >= 1, m >= 0 (k={k}, n={n}, m={m})")
    return m * math.sqrt(k * (n - k)) / n


def classify_active(p, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Number of entries strictly above ``threshold``."""
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    return int(np.count_nonzero(_counts(p) > threshold))


@dataclass(frozen=True)
class BalanceReport:
    avg_sigma_read: float | None
    avg_sigma_write: float | None
    active_histogram: Mapping[OpKind, Mapping[int, float]]
    n_patterns: Mapping[OpKind, int]
    threshold: float

    def avg_sigma(self, op) -> float | None:
        return self.avg_sigma_read if OpKind(op) is OpKind.READ else self.avg_sigma_write

    def fraction_at_most(self, op, k: int) -> float:
        return sum(f for a, f in self.active_histogram.get(OpKind(op), {}).items() if a <= k)


def _summarize(rows: Mapping[OpKind, np.ndarray], threshold: float, ddof: int) -> BalanceReport:
    avg, hist, n = {}, {}, {}
    for op in DATA_OPS:
        c = rows.get(op)
        if c is None or not len(c):
            avg[op], hist[op], n[op] = None, MappingProxyType({}), 0
            continue
        c = np.asarray(c, dtype=float)
        avg[op] = float(np.std(c, axis=1, ddof=ddof).mean())
        active = np.count_nonzero(c > threshold, axis=1)
        vals, freq = np.unique(active, return_counts=True)
        hist[op] = MappingProxyType({int(v): f / len(c) for v, f in zip(vals, freq)})
        n[op] = len(c)
    return BalanceReport(avg[OpKind.READ], avg[OpKind.WRITE], MappingProxyType(hist), MappingProxyType(n), threshold)


def balance_report(patterns: Iterable[OsdPattern], threshold: float = DEFAULT_THRESHOLD, ddof: int = 0) -> BalanceReport:
    """Average pattern sigma and active-entry histogram per op type.

    An op type without patterns is reported as ``None``, not 0.
    """
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    rows = defaultdict(list)
    for p in patterns:
        rows[p.op].append(p.counts)
    return _summarize({op: np.array(v) for op, v in rows.items()}, threshold, ddof)


def grid_report(grid: PatternGrid, threshold: float = DEFAULT_THRESHOLD, ddof: int = 0) -> BalanceReport:
    return _summarize({op: grid.rows(op)[1] for op in DATA_OPS}, threshold, ddof)


def superposition_sweep(
    stream: IoStream,
    cfg: StripeConfig,
    offsets: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[BalanceReport]:
    """Balance reports for 1..len(offsets) superimposed instances of ``stream``.

    Instance i starts at ``offsets[i]``; report k covers instances 0..k-1.
    """
    table = access_table(stream, cfg)
    grid = PatternGrid(cfg.width)
    out = []
    for off in offsets:
        grid.add(table, off)
        out.append(grid_report(grid, threshold))
    return out


# ---------------------------------------------------------------------------
# report CSV

SIM_COLUMNS = "kind,op,second,sigma,active,counts,value"


def format_simulation(patterns: Sequence[OsdPattern], report: BalanceReport, header: Mapping[str, object] = ()) -> str:
    """Pattern rows, then avg_sigma and active-histogram summary rows."""
    out = io.StringIO()
    out.write("# itb-simulate v1\n")
    for k, v in dict(header).items():
        out.write(f"# {k}={v}\n")
    out.write(SIM_COLUMNS + "\n")
    for p in patterns:
        counts = ";".join(map(str, p.counts))
        out.write(
            f"pattern,{p.op.value},{p.second},{pattern_sigma(p):.17g},"
            f"{classify_active(p, report.threshold)},{counts},\n"
        )
    for op in DATA_OPS:
        v = report.avg_sigma(op)
        out.write(f"avg_sigma,{op.value},,,,,{'' if v is None else format(v, '.17g')}\n")
        out.write(f"n_patterns,{op.value},,,,,{report.n_patterns[op]}\n")
    for op in DATA_OPS:
        for active, frac in sorted(report.active_histogram[op].items()):
            out.write(f"active_hist,{op.value},,,{active},,{frac:.17g}\n")
    return out.getvalue()


def read_simulation_summary(text: str) -> dict[str, float | None]:
    """avg_sigma_read / avg_sigma_write from a simulation CSV."""
    out = {}
    for line in text.splitlines():
        if line.startswith("avg_sigma,"):
            parts = line.split(",")
            out[f"avg_sigma_{parts[1]}"] = float(parts[6]) if parts[6] else None
    return out
