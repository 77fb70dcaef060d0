import math
import statistics
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itb.errors import DomainError, EmptyLog, MismatchedConfigs
from itb.metrics import (
    OpStats,
    RunReport,
    SweepTable,
    emit_report,
    metric_stats,
    repetition_stats,
    summarize,
)
from itb.replay import LogEntry, ReplayLog
from itb.trace import OpKind

GOLDEN = Path(__file__).parent / "golden"
MS = 1_000_000
S = 1_000_000_000
MiB = 1 << 20


def entry(op, nbytes, sched, start, lat, sid="s", tid=1):
    return LogEntry(sid, 1, tid, OpKind(op), nbytes, sched, start, lat, 0)


def test_two_read_mean():
    log = ReplayLog([entry("read", 10, 0, 0, 10 * MS), entry("read", 10, 0, 20 * MS, 30 * MS)])
    r = summarize(log)
    assert r.read.mean_latency_s == pytest.approx(0.020)
    assert r.read.count == 2
    assert r.write is None
    assert r.metrics()["write_latency_s"] is None


def test_throughput_two_mib_per_s():
    # four 1 MiB writes spread over [0, 2 s]
    log = ReplayLog([entry("write", MiB, i * S // 2, i * S // 2, S // 2) for i in range(4)])
    r = summarize(log)
    assert r.wall_duration_ns == 2 * S
    assert r.aggregate_throughput_bytes_per_s == pytest.approx(2 * MiB)


def test_duration_counts_from_first_scheduled_start():
    # a late first start does not shorten the run
    log = ReplayLog([entry("write", 100, 0, S, S)])
    assert summarize(log).wall_duration_ns == 2 * S


def test_non_data_ops_excluded_from_latency():
    log = ReplayLog([entry("open", 0, 0, 0, 50 * MS), entry("write", 8, 0, 50 * MS, 2 * MS), entry("lseek", 0, 0, 52 * MS, MS)])
    r = summarize(log)
    assert r.mean_latency_s == pytest.approx(0.002)
    assert r.total_bytes == 8


def test_empty_log():
    with pytest.raises(EmptyLog):
        summarize(ReplayLog([]))


def test_n_streams_from_config_or_entries():
    es = [entry("read", 1, 0, 0, 1, sid="a"), entry("read", 1, 0, 0, 1, sid="b")]
    assert summarize(ReplayLog(es)).n_streams == 2
    assert summarize(ReplayLog(es, config={"n_streams": 5})).n_streams == 5


# -- repetition stats -------------------------------------------------------


def report(write_latency, read_latency=None, config=None, nbytes=100, dur=S):
    return RunReport(
        read=OpStats(1, read_latency, nbytes) if read_latency is not None else None,
        write=OpStats(1, write_latency, nbytes),
        mean_latency_s=write_latency,
        total_bytes=nbytes,
        wall_duration_ns=dur,
        n_streams=1,
        config=config or {},
    )


def test_one_two_four():
    st_ = repetition_stats([report(v) for v in (1, 1, 4)], estimator="population")["write_latency_s"]
    assert st_.mean == 2
    assert st_.stddev == pytest.approx(math.sqrt(2))
    assert st_.normalized_stddev == pytest.approx(0.7071, abs=1e-4)


def test_three_latencies_both_estimators():
    vals = (0.063, 0.011, 0.020)
    reps = [report(v) for v in vals]
    sample = repetition_stats(reps)["write_latency_s"]
    pop = repetition_stats(reps, "population")["write_latency_s"]
    assert sample.normalized_stddev == pytest.approx(statistics.stdev(vals) / statistics.mean(vals), rel=1e-12)
    assert pop.normalized_stddev == pytest.approx(statistics.pstdev(vals) / statistics.mean(vals), rel=1e-12)
    assert sample.normalized_stddev == pytest.approx(0.887, abs=1e-3)
    assert pop.normalized_stddev == pytest.approx(0.724, abs=1e-3)


def test_identical_repetitions():
    st_ = repetition_stats([report(0.5)] * 3)["write_latency_s"]
    assert st_.stddev == 0 and st_.normalized_stddev == 0


def test_zero_mean_has_no_normalized_stddev():
    assert metric_stats([0.0, 0.0]).normalized_stddev is None


def test_metric_absent_in_any_run_is_absent():
    r = repetition_stats([report(1.0, 2.0), report(1.0)])
    assert "read_latency_s" not in r.metrics
    assert "write_latency_s" in r.metrics


def test_rep_key_ignored_but_other_config_must_match():
    repetition_stats([report(1, config={"width": 4, "rep": 0}), report(2, config={"width": 4, "rep": 1})])
    with pytest.raises(MismatchedConfigs):
        repetition_stats([report(1, config={"width": 4}), report(2, config={"width": 8})])


def test_repetition_domain():
    with pytest.raises(DomainError):
        repetition_stats([report(1)])
    with pytest.raises(DomainError):
        repetition_stats([report(1), report(2)], estimator="median")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=10))
def test_sample_at_least_population(vals):
    s = metric_stats(vals, "sample").stddev
    p = metric_stats(vals, "population").stddev
    assert s >= p - 1e-12
    n = len(vals)
    assert s == pytest.approx(p * math.sqrt(n / (n - 1)), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["read", "write", "lseek"]), st.integers(0, 10**7), st.integers(0, 10**9)), min_size=1, max_size=30))
def test_summary_identities(rows):
    es = [entry(op, n if op != "lseek" else 0, 0, i * MS, lat) for i, (op, n, lat) in enumerate(rows)]
    r = summarize(ReplayLog(es))
    # throughput times duration gives total bytes back
    if r.wall_duration_ns:
        assert round(r.aggregate_throughput_bytes_per_s * r.wall_duration_ns / S) == r.total_bytes
    # overall mean is the count-weighted mean of the per-op means
    parts = [s for s in (r.read, r.write) if s]
    if parts:
        weighted = sum(s.count * s.mean_latency_s for s in parts) / sum(s.count for s in parts)
        assert r.mean_latency_s == pytest.approx(weighted, rel=1e-12)
    else:
        assert r.mean_latency_s is None


# -- emission ---------------------------------------------------------------


def golden_run():
    log = ReplayLog(
        [
            entry("read", 4096, 0, 100, 2_500_000),
            entry("write", 8192, 0, 3_000_000, 7_000_000, tid=2),
            entry("write", 1000, 1_000_000, 11_000_000, 333_333, tid=2),
        ],
        config={"n_streams": 1, "pacing": "full", "width": 4},
    )
    return summarize(log)


def golden_stats():
    reps = [report(v, read_latency=v / 3, config={"rep": i}, nbytes=10**6, dur=(i + 1) * S) for i, v in enumerate((0.063, 0.011, 0.020))]
    return repetition_stats(reps)


def golden_sweep():
    runs = []
    for n in (1, 2):
        for w in (1, 4):
            for rep in range(2):
                lat = 0.01 * n + 0.001 * w + 0.0001 * rep
                runs.append(
                    RunReport(
                        read=None,
                        write=OpStats(10, lat, 10 * 4096),
                        mean_latency_s=lat,
                        total_bytes=10 * 4096,
                        wall_duration_ns=S + rep * MS,
                        n_streams=n,
                        config={"n_streams": n, "width": w, "rep": rep, "avg_sigma_write": 1.5 * w / n, "avg_sigma_read": None},
                    )
                )
    return SweepTable(tuple(runs))


@pytest.mark.parametrize(
    "name, build, fmt",
    [
        ("run_report.csv", golden_run, "csv"),
        ("repetition_stats.csv", golden_stats, "csv"),
        ("sweep_table.csv", golden_sweep, "csv"),
        ("sweep_table.tsv", golden_sweep, "tsv"),
    ],
)
def test_golden(name, build, fmt):
    assert emit_report(build(), fmt) == (GOLDEN / name).read_text()


def test_values_are_lossless():
    text = emit_report(golden_stats())
    row = next(l for l in text.splitlines() if l.startswith("write_latency_s,"))
    mean = float(row.split(",")[3])
    assert mean == statistics.mean((0.063, 0.011, 0.020))


def test_sweep_row_count():
    rows = golden_sweep().rows()
    assert sum(r["kind"] == "run" for r in rows) == 8
    assert sum(r["kind"] != "run" for r in rows) == 4 * 3


def test_emit_unknown():
    with pytest.raises(DomainError):
        emit_report(golden_run(), "json")
    with pytest.raises(TypeError):
        emit_report(object())
