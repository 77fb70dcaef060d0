"""Share of per-second write patterns by number of active OSD entries.

    python scripts/active_histogram.py --widths 4,8,16 --threshold 30
"""

import argparse
import sys

from itb.distsim import StripeConfig, balance_report, build_patterns
from itb.synth import generate, resolve_spec
from itb.trace import OpKind, load_trace
from itb.units import parse_bytes, parse_int_list


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trace")
    ap.add_argument("--spec", default="maxdb-init")
    ap.add_argument("--events", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--widths", type=parse_int_list, default=[4, 8, 16])
    ap.add_argument("--stripe-size", type=parse_bytes, default=128 * 1024)
    ap.add_argument("--threshold", type=float, default=30)
    ap.add_argument("--op", choices=("read", "write"), default="write")
    args = ap.parse_args(argv)

    stream = load_trace(args.trace) if args.trace else generate(
        resolve_spec(args.spec).with_(n_events=args.events, seed=args.seed)
    )
    op = OpKind(args.op)
    print("width,active_entries,fraction,n_patterns")
    for width in args.widths:
        r = balance_report(build_patterns(stream, StripeConfig(args.stripe_size, width)), args.threshold)
        for active, frac in sorted(r.active_histogram[op].items()):
            print(f"{width},{active},{frac:.4f},{r.n_patterns[op]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
