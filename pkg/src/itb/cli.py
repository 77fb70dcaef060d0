"""``itb`` command line: gen | ingest | replay | simulate | report | sweep.

Exit status: 0 on success, 1 on a domain error (the error class name is
printed), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import distsim
from .errors import ItbError
from .metrics import SweepTable, emit_report, repetition_stats, summarize
from .offsets import START_WINDOW_NS, load_or_create_offsets, uniform_start_offsets
from .replay import Pacing, ReplayLog, ReplayPlan, prepare_tree, replay
from .synth import GenSpec, generate, resolve_spec
from .trace import characterize, derive_think_times, dump_trace, format_profile, load_trace, serialize_trace
from .units import parse_bytes, parse_int_list

log = logging.getLogger("itb")

NS_PER_S = 1_000_000_000


@dataclass
class GlobalConfig:
    seed: int = 0
    verbosity: int = 0
    strict: bool = False
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args) -> "GlobalConfig":
        seed = args.seed
        if seed is None:
            seed = int(os.environ.get("ITB_SEED", "0"))
        paths = {k: getattr(args, k) for k in ("trace", "out", "root", "logs", "offsets") if getattr(args, k, None)}
        return cls(seed=seed, verbosity=args.verbose, strict=args.strict, paths=paths)


def _write_out(path, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _size_arg(text):
    try:
        return parse_bytes(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _pacing_arg(text):
    try:
        return Pacing.parse(text)
    except ItbError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _policy_arg(text):
    try:
        return distsim.parse_policy(text)
    except (ItbError, ValueError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _list_arg(text):
    try:
        return parse_int_list(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _offsets(n, cfg: GlobalConfig, args, seed=None):
    seed = cfg.seed if seed is None else seed
    window = round(args.start_window * NS_PER_S)
    if window == 0:
        return [0] * n
    if getattr(args, "offsets", None):
        return load_or_create_offsets(args.offsets, n, seed, window)
    return uniform_start_offsets(n, seed, window)


def _instances(streams, n):
    """``n`` streams cycling through the given traces, with distinct ids."""
    if n == len(streams) and len({s.stream_id for s in streams}) == n:
        return list(streams)
    return [streams[i % len(streams)].relabel(f"{streams[i % len(streams)].stream_id}#{i}") for i in range(n)]


# ---------------------------------------------------------------------------
# subcommands

_GEN_ALIASES = {"n_events": ["--events"], "n_threads": ["--threads"], "n_files": ["--files"]}


def cmd_gen(args, cfg: GlobalConfig) -> int:
    spec = resolve_spec(args.spec)
    overrides = {f.name: getattr(args, f.name) for f in fields(GenSpec) if getattr(args, f.name) is not None}
    if args.seed is not None or "ITB_SEED" in os.environ:
        overrides.setdefault("seed", str(cfg.seed))
    if overrides:
        spec = GenSpec.from_mapping(overrides, base=spec)
    if args.dump_spec:
        _write_out(args.dump_spec, "".join(f"{k} = {v}\n" for k, v in spec.to_mapping().items()))
    stream = generate(spec)
    _write_out(args.out, serialize_trace(stream))
    log.info("generated %d events", len(stream))
    return 0


def cmd_ingest(args, cfg: GlobalConfig) -> int:
    stream = load_trace(args.trace, strict=cfg.strict)
    if args.out:
        dump_trace(stream, args.out)
    gaps = derive_think_times(stream).all_gaps()
    report = format_profile(characterize(stream))
    report += f"threads: {len(stream.threads)}  events: {len(stream)}\n"
    if gaps:
        report += f"think time: mean {sum(gaps) / len(gaps) / 1e6:.3f} ms over {len(gaps)} gaps\n"
    (sys.stderr if args.out in (None, "-") else sys.stdout).write(report)
    return 0


def cmd_replay(args, cfg: GlobalConfig) -> int:
    traces = [load_trace(p, strict=cfg.strict) for p in args.trace]
    n = args.streams or len(traces)
    streams = _instances(traces, n)
    plan = ReplayPlan(
        list(zip(streams, _offsets(n, cfg, args))),
        args.root,
        sync_writes=args.sync_writes,
        pacing=args.pacing,
        seed=cfg.seed,
        strict=cfg.strict,
        max_workers=args.max_workers,
        process_per_pid=args.process_per_pid,
    )
    if not args.skip_prepare:
        pop = prepare_tree(plan)
        log.info("prepared %d files, %d bytes", len(pop.sizes), pop.total_bytes)
    result = replay(plan)
    _write_out(args.out, result.to_csv())
    return 0


def cmd_simulate(args, cfg: GlobalConfig) -> int:
    traces = [load_trace(p, strict=cfg.strict) for p in args.trace]
    n = args.copies or len(traces)
    streams = _instances(traces, n)
    policy, hseed = args.policy
    sc = distsim.StripeConfig(args.stripe_size, args.width, policy, hseed)
    start_seed = cfg.seed if args.start_seed is None else args.start_seed
    offsets = _offsets(n, cfg, args, seed=start_seed)
    patterns = distsim.build_patterns(streams, sc, offsets)
    report = distsim.balance_report(patterns, args.threshold)
    header = {
        "stripe_size": sc.stripe_size,
        "width": sc.width,
        "policy": "rr" if policy == "round_robin" else f"hash:{hseed}",
        "threshold": args.threshold,
        "streams": n,
        "start_seed": start_seed,
    }
    _write_out(args.out, distsim.format_simulation(patterns, report, header))
    return 0


def cmd_report(args, cfg: GlobalConfig) -> int:
    runs = [summarize(ReplayLog.read(p)) for p in args.logs]
    if args.stats:
        text = emit_report(repetition_stats(runs, args.estimator), args.format)
    elif len(runs) == 1:
        text = emit_report(runs[0], args.format)
    else:
        text = emit_report(SweepTable(tuple(runs), args.estimator), args.format)
    _write_out(args.out, text)
    return 0


def cmd_sweep(args, cfg: GlobalConfig) -> int:
    base = load_trace(args.trace, strict=cfg.strict)
    counts, widths = args.streams, args.widths
    nmax = max(counts)
    sidecar = args.offsets
    if sidecar is None and args.out not in (None, "-"):
        sidecar = str(args.out) + ".offsets.json"
    window = round(args.start_window * NS_PER_S)
    offsets = load_or_create_offsets(sidecar, nmax, cfg.seed, window) if window else [0] * nmax
    instances = _instances([base], nmax)
    policy, hseed = args.policy
    runs = []
    for width in widths:
        root = Path(str(args.root).format(width=width))
        sc = distsim.StripeConfig(args.stripe_size, width, policy, hseed)
        sweep = distsim.superposition_sweep(base, sc, offsets, args.threshold)
        prepared = False
        for n in counts:
            sim = sweep[n - 1]
            for rep in range(args.reps):
                plan = ReplayPlan(
                    list(zip(instances[:n], offsets[:n])),
                    root,
                    sync_writes=args.sync_writes,
                    pacing=args.pacing,
                    seed=cfg.seed,
                    strict=cfg.strict,
                    config={
                        "width": width,
                        "rep": rep,
                        "stripe_size": args.stripe_size,
                        "avg_sigma_read": sim.avg_sigma_read,
                        "avg_sigma_write": sim.avg_sigma_write,
                    },
                )
                if not prepared:
                    prepare_tree(plan)
                    prepared = True
                result = replay(plan)
                if args.logs_dir:
                    Path(args.logs_dir).mkdir(parents=True, exist_ok=True)
                    result.write(Path(args.logs_dir) / f"run-w{width}-n{n}-r{rep}.csv")
                runs.append(summarize(result))
                log.info("width=%d streams=%d rep=%d done", width, n, rep)
    _write_out(args.out, emit_report(SweepTable(tuple(runs), args.estimator), args.format))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (falls back to $ITB_SEED, then 0)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging; repeat for debug")
    common.add_argument("--strict", action="store_true", help="turn every trace/replay repair into an error")

    p = argparse.ArgumentParser(prog="itb", description="Trace-driven filesystem benchmarking toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic trace")
    g.add_argument("--spec", default="maxdb-init", help="preset name (maxdb-init) or key=value config file")
    for f in fields(GenSpec):
        if f.name == "seed":
            continue
        flags = ["--" + f.name.replace("_", "-")] + _GEN_ALIASES.get(f.name, [])
        g.add_argument(*flags, dest=f.name, default=None, metavar="VALUE", help=f"override {f.name}")
    g.add_argument("--dump-spec", metavar="FILE", help="also write the effective spec as key=value")
    g.add_argument("--out", "-o", default="-", help="trace output (default stdout)")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("ingest", parents=[common], help="validate/repair a trace and characterize it")
    i.add_argument("--trace", required=True)
    i.add_argument("--out", "-o", help="write the canonical (repaired) trace here")
    i.set_defaults(func=cmd_ingest)

    def start_opts(sp):
        sp.add_argument("--start-window", type=float, default=START_WINDOW_NS / NS_PER_S, metavar="SECONDS",
                        help="stream start offsets are uniform on [0, SECONDS] (0 = all start together)")
        sp.add_argument("--offsets", metavar="FILE", help="sidecar JSON holding the once-drawn start offsets")

    r = sub.add_parser("replay", parents=[common], help="replay traces against a directory")
    r.add_argument("--trace", nargs="+", required=True)
    r.add_argument("--root", required=True, help="directory under test")
    r.add_argument("--streams", type=int, default=None, help="concurrent streams (traces are cycled)")
    r.add_argument("--pacing", type=_pacing_arg, default=Pacing("full"), help="full | scale:<f> | fast")
    r.add_argument("--sync-writes", action="store_true", help="open files with O_SYNC")
    r.add_argument("--max-workers", type=int, default=256)
    r.add_argument("--process-per-pid", action="store_true", help="one OS process per recorded pid")
    r.add_argument("--skip-prepare", action="store_true", help="reuse an existing file tree")
    r.add_argument("--out", "-o", default="-", help="replay log CSV")
    start_opts(r)
    r.set_defaults(func=cmd_replay)

    def sim_opts(sp):
        sp.add_argument("--stripe-size", type=_size_arg, default=128 * 1024, help="e.g. 128KiB")
        sp.add_argument("--policy", type=_policy_arg, default=("round_robin", 0), help="rr | hash:<seed>")
        sp.add_argument("--threshold", type=float, default=distsim.DEFAULT_THRESHOLD, help="active-entry threshold")

    s = sub.add_parser("simulate", parents=[common], help="simulate OSD placement and load balance")
    s.add_argument("--trace", nargs="+", required=True)
    s.add_argument("--width", type=int, required=True, help="stripe width = number of OSDs")
    s.add_argument("--copies", type=int, default=None, help="superimpose this many instances (traces cycled)")
    s.add_argument("--start-seed", type=int, default=None, help="seed for start offsets (default: --seed)")
    s.add_argument("--out", "-o", default="-")
    sim_opts(s)
    start_opts(s)
    s.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("report", parents=[common], help="summarize replay logs into tables")
    rp.add_argument("--logs", nargs="+", required=True)
    rp.add_argument("--stats", action="store_true", help="treat logs as repetitions of one experiment")
    rp.add_argument("--estimator", choices=("sample", "population"), default="sample")
    rp.add_argument("--format", choices=("csv", "tsv"), default="csv")
    rp.add_argument("--out", "-o", default="-")
    rp.set_defaults(func=cmd_report)

    sw = sub.add_parser("sweep", parents=[common], help="replay matrix: stream counts x widths x repetitions")
    sw.add_argument("--trace", required=True)
    sw.add_argument("--root", required=True, help="target dir; may contain {width} to select a volume per width")
    sw.add_argument("--streams", type=_list_arg, default=[1, 2, 4, 6, 8, 10, 12])
    sw.add_argument("--widths", type=_list_arg, default=[1, 4, 8])
    sw.add_argument("--reps", type=int, default=3)
    sw.add_argument("--pacing", type=_pacing_arg, default=Pacing("full"))
    sw.add_argument("--sync-writes", action="store_true")
    sw.add_argument("--estimator", choices=("sample", "population"), default="sample")
    sw.add_argument("--format", choices=("csv", "tsv"), default="csv")
    sw.add_argument("--logs-dir", help="keep every run's replay log here")
    sw.add_argument("--out", "-o", default="-")
    sim_opts(sw)
    start_opts(sw)
    sw.set_defaults(func=cmd_sweep)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = GlobalConfig.from_args(args)
    except ValueError:
        print(f"itb: ITB_SEED must be an integer, got {os.environ.get('ITB_SEED')!r}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(cfg.verbosity, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args, cfg)
    except ItbError as e:
        print(f"itb {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"itb {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
