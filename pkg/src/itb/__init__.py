"""Trace-driven filesystem benchmarking: trace format, synthetic workloads,
replay, OSD placement simulation and run metrics."""

from .distsim import (
    BalanceReport,
    OsdPattern,
    StripeConfig,
    analytic_sigma,
    balance_report,
    build_patterns,
    classify_active,
    map_access,
    pattern_sigma,
)
from .metrics import RepetitionStats, RunReport, emit_report, repetition_stats, summarize
from .replay import Pacing, ReplayLog, ReplayPlan, pacing_violations, prepare_tree, replay
from .synth import PRESETS, GenSpec, generate
from .trace import (
    IoStream,
    OpKind,
    TraceEvent,
    characterize,
    derive_think_times,
    parse_trace,
    serialize_trace,
)

__version__ = "0.1.0"
