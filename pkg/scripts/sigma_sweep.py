"""Average write sigma as more copies of one workload are superimposed.

Prints one CSV row per (width, number of streams).  Each extra stream is
the same synthetic trace started at a uniform random offset in
[0, window].  ``--binarize`` adds a column computed on 0/1 patterns
(entry active or not) instead of raw counts.

    python scripts/sigma_sweep.py --events 100000 --max-streams 32 --widths 4,8,16
"""

import argparse
import sys

import numpy as np

from itb.distsim import PatternGrid, StripeConfig, access_table
from itb.offsets import uniform_start_offsets
from itb.synth import resolve_spec, generate
from itb.trace import OpKind, load_trace
from itb.units import parse_bytes, parse_int_list


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trace", help="trace file (default: generate from --spec)")
    ap.add_argument("--spec", default="maxdb-init")
    ap.add_argument("--events", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0, help="generator seed")
    ap.add_argument("--start-seed", type=int, default=3)
    ap.add_argument("--window", type=float, default=300.0, help="start window in seconds")
    ap.add_argument("--max-streams", type=int, default=32)
    ap.add_argument("--widths", type=parse_int_list, default=[4, 8, 16])
    ap.add_argument("--stripe-size", type=parse_bytes, default=128 * 1024)
    ap.add_argument("--policy", choices=("round_robin", "hashed"), default="round_robin")
    ap.add_argument("--threshold", type=float, default=30)
    ap.add_argument("--binarize", action="store_true")
    args = ap.parse_args(argv)

    if args.trace:
        stream = load_trace(args.trace)
    else:
        stream = generate(resolve_spec(args.spec).with_(n_events=args.events, seed=args.seed))
    offsets = uniform_start_offsets(args.max_streams, args.start_seed, round(args.window * 1e9))

    cols = ["width", "streams", "n_patterns", "avg_sigma_write", "mean_count", "active_mean"]
    if args.binarize:
        cols.append("avg_sigma_active")
    print(",".join(cols))
    for width in args.widths:
        cfg = StripeConfig(args.stripe_size, width, args.policy, 0)
        table = access_table(stream, cfg)
        grid = PatternGrid(width)
        for k, off in enumerate(offsets, 1):
            grid.add(table, off)
            _, counts = grid.rows(OpKind.WRITE)
            counts = counts.astype(float)
            active = counts > args.threshold
            row = [
                width,
                k,
                len(counts),
                f"{counts.std(axis=1).mean():.4f}",
                f"{counts.mean():.3f}",
                f"{active.sum(axis=1).mean():.3f}",
            ]
            if args.binarize:
                row.append(f"{active.astype(float).std(axis=1).mean():.4f}")
            print(",".join(map(str, row)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
