"""Latency/throughput aggregates per replay run and across repetitions."""

from __future__ import annotations

import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, EmptyLog, MismatchedConfigs
from .replay import ReplayLog
from .trace import DATA_OPS, OpKind

NS_PER_S = 1_000_000_000

# config keys that legitimately differ between repetitions of one experiment
REPETITION_KEYS = frozenset({"rep"})


def _g(x) -> str:
    """Lossless float text (17 significant digits); None -> empty."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(frozen=True)
class OpStats:
    count: int
    mean_latency_s: float
    total_bytes: int


@dataclass(frozen=True)
class RunReport:
    read: OpStats | None
    write: OpStats | None
    mean_latency_s: float | None
    total_bytes: int
    wall_duration_ns: int
    n_streams: int
    config: Mapping = field(default_factory=dict)

    @property
    def wall_duration_s(self) -> float:
        return self.wall_duration_ns / NS_PER_S

    @property
    def aggregate_throughput_bytes_per_s(self) -> float:
        if self.wall_duration_ns == 0:
            return 0.0 if self.total_bytes == 0 else math.inf
        return self.total_bytes * NS_PER_S / self.wall_duration_ns

    def op(self, kind) -> OpStats | None:
        return self.read if OpKind(kind) is OpKind.READ else self.write

    def metrics(self) -> dict[str, float | None]:
        return {
            "read_latency_s": self.read.mean_latency_s if self.read else None,
            "write_latency_s": self.write.mean_latency_s if self.write else None,
            "mean_latency_s": self.mean_latency_s,
            "throughput_bytes_per_s": self.aggregate_throughput_bytes_per_s,
        }


def summarize(log: ReplayLog) -> RunReport:
    if not log.entries:
        raise EmptyLog("replay log has no entries")
    lat = defaultdict(list)
    moved = defaultdict(int)
    for e in log.entries:
        if e.op in DATA_OPS:
            lat[e.op].append(e.latency_ns)
            moved[e.op] += e.bytes
    stats = {}
    for op in DATA_OPS:
        if lat[op]:
            stats[op] = OpStats(len(lat[op]), sum(lat[op]) / len(lat[op]) / NS_PER_S, moved[op])
    all_lat = lat[OpKind.READ] + lat[OpKind.WRITE]
    begin = min(e.scheduled_start_ns for e in log.entries)
    end = max(e.end_ns for e in log.entries)
    n_streams = log.config.get("n_streams") or len({e.stream_id for e in log.entries})
    return RunReport(
        read=stats.get(OpKind.READ),
        write=stats.get(OpKind.WRITE),
        mean_latency_s=sum(all_lat) / len(all_lat) / NS_PER_S if all_lat else None,
        total_bytes=moved[OpKind.READ] + moved[OpKind.WRITE],
        wall_duration_ns=end - begin,
        n_streams=int(n_streams),
        config=MappingProxyType(dict(log.config)),
    )


@dataclass(frozen=True)
class MetricStats:
    n: int
    mean: float
    stddev: float
    normalized_stddev: float | None  # absent when mean == 0


@dataclass(frozen=True)
class RepetitionStats:
    estimator: str
    metrics: Mapping[str, MetricStats]
    config: Mapping = field(default_factory=dict)

    def __getitem__(self, name) -> MetricStats:
        return self.metrics[name]


def _ddof(estimator: str) -> int:
    if estimator not in ("sample", "population"):
        raise DomainError(f"estimator must be 'sample' or 'population', got {estimator!r}")
    return 1 if estimator == "sample" else 0


def metric_stats(values: Sequence[float], estimator: str = "sample") -> MetricStats:
    x = np.asarray(values, dtype=float)
    ddof = _ddof(estimator)
    if len(x) <= ddof:
        raise DomainError(f"need more than {ddof} values")
    mean = float(x.mean())
    sd = float(x.std(ddof=ddof))
    return MetricStats(len(x), mean, sd, sd / mean if mean != 0 else None)


def _comparable(config: Mapping) -> dict:
    return {k: v for k, v in config.items() if k not in REPETITION_KEYS}


def repetition_stats(reports: Sequence[RunReport], estimator: str = "sample") -> RepetitionStats:
    """Mean, stddev and stddev/mean of every metric over repeated runs.

    Sample (n-1) stddev is the default.  A metric absent from any run is
    absent from the result.
    """
    if len(reports) < 2:
        raise DomainError("need at least two repetitions")
    ref = _comparable(reports[0].config)
    for r in reports[1:]:
        if _comparable(r.config) != ref:
            raise MismatchedConfigs(f"{_comparable(r.config)} != {ref}")
    out = {}
    for name in reports[0].metrics():
        vals = [r.metrics()[name] for r in reports]
        if any(v is None for v in vals):
            continue
        out[name] = metric_stats(vals, estimator)
    return RepetitionStats(estimator, MappingProxyType(out), MappingProxyType(ref))


# ---------------------------------------------------------------------------
# sweep tables

SWEEP_KEYS = ("n_streams", "width", "rep")
SWEEP_METRICS = (
    "read_latency_s",
    "write_latency_s",
    "mean_latency_s",
    "throughput_bytes_per_s",
    "wall_duration_s",
    "avg_sigma_read",
    "avg_sigma_write",
)


@dataclass(frozen=True)
class SweepTable:
    """Run rows plus mean/stddev/normalized_stddev rows per (n_streams, width)."""

    runs: tuple[RunReport, ...]
    estimator: str = "sample"

    def _values(self, r: RunReport) -> dict:
        v = r.metrics()
        v["wall_duration_s"] = r.wall_duration_s
        v["avg_sigma_read"] = r.config.get("avg_sigma_read")
        v["avg_sigma_write"] = r.config.get("avg_sigma_write")
        return v

    def rows(self) -> list[dict]:
        key = lambda r: (r.config.get("n_streams", r.n_streams), r.config.get("width"))
        runs = sorted(self.runs, key=lambda r: (*map(lambda x: (x is None, x), key(r)), r.config.get("rep", 0)))
        out = []
        for r in runs:
            row = {"kind": "run", "n_streams": r.n_streams, "width": r.config.get("width"), "rep": r.config.get("rep")}
            row.update(self._values(r))
            out.append(row)
        groups = defaultdict(list)
        for r in runs:
            groups[key(r)].append(r)
        for (n, w), rs in groups.items():
            if len(rs) < 2:
                continue
            stats = {}
            for m in SWEEP_METRICS:
                vals = [self._values(r)[m] for r in rs]
                stats[m] = None if any(v is None for v in vals) else metric_stats(vals, self.estimator)
            for kind in ("mean", "stddev", "normalized_stddev"):
                row = {"kind": kind, "n_streams": n, "width": w, "rep": None}
                row.update({m: (getattr(s, kind) if s else None) for m, s in stats.items()})
                out.append(row)
        return out


# ---------------------------------------------------------------------------
# emission

RUN_COLUMNS = (
    "n_streams",
    "wall_duration_s",
    "aggregate_throughput_bytes_per_s",
    "total_bytes",
    "read_count",
    "read_mean_latency_s",
    "read_total_bytes",
    "write_count",
    "write_mean_latency_s",
    "write_total_bytes",
    "mean_latency_s",
    "config",
)
STATS_COLUMNS = ("metric", "estimator", "n", "mean", "stddev", "normalized_stddev")
SWEEP_COLUMNS = ("kind",) + SWEEP_KEYS + SWEEP_METRICS


def _run_row(r: RunReport) -> list[str]:
    row = [_g(r.n_streams), _g(r.wall_duration_s), _g(r.aggregate_throughput_bytes_per_s), _g(r.total_bytes)]
    for s in (r.read, r.write):
        row += [_g(s.count), _g(s.mean_latency_s), _g(s.total_bytes)] if s else ["", "", ""]
    row += [_g(r.mean_latency_s), json.dumps(dict(r.config), sort_keys=True)]
    return row


def _quote(cell: str, sep: str) -> str:
    if sep in cell or '"' in cell:
        return '"' + cell.replace('"', '""') + '"'
    return cell


def emit_report(obj, fmt: str = "csv") -> str:
    """Render a RunReport, RepetitionStats or SweepTable as csv/tsv text."""
    sep = {"csv": ",", "tsv": "\t"}.get(fmt)
    if sep is None:
        raise DomainError(f"unknown format {fmt!r}")
    if isinstance(obj, RunReport):
        header, rows = RUN_COLUMNS, [_run_row(obj)]
    elif isinstance(obj, RepetitionStats):
        header = STATS_COLUMNS
        rows = [
            [name, obj.estimator, _g(s.n), _g(s.mean), _g(s.stddev), _g(s.normalized_stddev)]
            for name, s in obj.metrics.items()
        ]
    elif isinstance(obj, SweepTable):
        header = SWEEP_COLUMNS
        rows = [[_g(r.get(c)) if c != "kind" else r[c] for c in SWEEP_COLUMNS] for r in obj.rows()]
    else:
        raise TypeError(f"cannot emit {type(obj).__name__}")
    out = io.StringIO()
    out.write(sep.join(header) + "\n")
    for row in rows:
        out.write(sep.join(_quote(c, sep) for c in row) + "\n")
    return out.getvalue()
