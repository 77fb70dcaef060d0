"""Synthetic trace generation from a workload profile.

Each generated thread opens every file up front, issues ``n_events``
mixed operations drawn i.i.d. from ``op_mix`` and closes its files at the
end.  Lseeks aim at a "hot region" of ``region_bytes``; the region is
re-drawn uniformly over all regions of all files after, on average,
``region_ops`` seeks.  Reads and writes run at the implicit file position.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import InvalidSpec
from .trace import IoStream, OpKind, TraceEvent, derive_think_times, load_trace
from .units import parse_bytes, parse_duration

KiB = 1024
MiB = 1024 * KiB

MIX_KINDS = (OpKind.READ, OpKind.WRITE, OpKind.LSEEK, OpKind.META)

_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def _call(text: str) -> tuple[str, list[str]]:
    m = _CALL.match(text)
    if not m:
        raise InvalidSpec(f"expected name(args), got {text!r}")
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2).strip() else []
    return m.group(1).lower(), args


@dataclass(frozen=True)
class SizeModel:
    """Payload size distribution in bytes: constant, uniform(a, b) or lognormal(mu, sigma)."""

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "lognormal"):
            raise InvalidSpec(f"unknown size model {self.kind!r}")
        if self.kind == "constant" and self.a < 0:
            raise InvalidSpec("constant size must be >= 0")
        if self.kind == "uniform" and not 0 <= self.a <= self.b:
            raise InvalidSpec("uniform size needs 0 <= a <= b")
        if self.kind == "lognormal" and self.b < 0:
            raise InvalidSpec("lognormal sigma must be >= 0")

    @classmethod
    def lognormal_mean(cls, mean: float, sigma: float) -> "SizeModel":
        """Lognormal whose expectation is ``mean`` bytes."""
        return cls("lognormal", math.log(mean) - sigma * sigma / 2, sigma)

    @property
    def mean(self) -> float:
        if self.kind == "constant":
            return self.a
        if self.kind == "uniform":
            return (self.a + self.b) / 2
        return math.exp(self.a + self.b * self.b / 2)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            x = np.full(n, self.a)
        elif self.kind == "uniform":
            x = rng.uniform(self.a, self.b, n)
        else:
            x = rng.lognormal(self.a, self.b, n)
        return np.maximum(np.rint(x), 1 if self.kind == "lognormal" else 0).astype(np.int64)

    def __str__(self):
        if self.kind == "constant":
            return f"constant({self.a:g})"
        return f"{self.kind}({self.a!r},{self.b!r})"

    @classmethod
    def parse(cls, text: str) -> "SizeModel":
        name, args = _call(text)
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise InvalidSpec(f"bad size model arguments in {text!r}") from None
        want = {"constant": 1, "uniform": 2, "lognormal": 2}.get(name)
        if want is None or len(vals) != want:
            raise InvalidSpec(f"bad size model {text!r}")
        return cls(name, *vals)


@dataclass(frozen=True)
class ThinkModel:
    """Gap between consecutive ops of a thread, in nanoseconds."""

    kind: str
    mean_ns: float = 0.0
    samples: tuple[int, ...] = ()
    source: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "empirical"):
            raise InvalidSpec(f"unknown think model {self.kind!r}")
        if self.mean_ns < 0:
            raise InvalidSpec("think time must be >= 0")
        if self.kind == "empirical" and not self.samples:
            raise InvalidSpec("empirical think model needs at least one gap")

    @classmethod
    def from_trace(cls, path: str) -> "ThinkModel":
        gaps = derive_think_times(load_trace(path)).all_gaps()
        return cls("empirical", samples=tuple(gaps), source=str(path))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, round(self.mean_ns), dtype=np.int64)
        if self.kind == "exponential":
            return np.rint(rng.exponential(self.mean_ns, n)).astype(np.int64)
        return rng.choice(np.asarray(self.samples, dtype=np.int64), n)

    def __str__(self):
        if self.kind == "empirical":
            return f"empirical({self.source})"
        return f"{self.kind}({self.mean_ns:g})"

    @classmethod
    def parse(cls, text: str) -> "ThinkModel":
        name, args = _call(text)
        if name == "empirical" and len(args) == 1:
            return cls.from_trace(args[0])
        if name in ("constant", "exponential") and len(args) == 1:
            try:
                return cls(name, parse_duration(args[0]))
            except ValueError:
                pass
        raise InvalidSpec(f"bad think model {text!r}")


def _freeze_mix(mix) -> Mapping[OpKind, float]:
    return MappingProxyType({OpKind(k): float(v) for k, v in dict(mix).items()})


@dataclass(frozen=True)
class GenSpec:
    op_mix: Mapping[OpKind, float]
    size_model: Mapping[OpKind, SizeModel] = field(
        default_factory=lambda: {OpKind.READ: SizeModel("constant", 4096), OpKind.WRITE: SizeModel("constant", 4096)}
    )
    think_model: ThinkModel = ThinkModel("constant", 0)
    n_files: int = 1
    file_size_bytes: int = 16 * MiB
    n_threads: int = 1
    n_events: int = 1000
    seed: int = 0
    # extensions beyond the core profile
    region_bytes: int = 128 * KiB
    region_ops: float = 100.0
    align_bytes: int = 8 * KiB
    op_latency_ns: int = 100_000
    lseek_latency_ns: int = 1_000
    stream_id: str = "s0"
    pid: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "op_mix", _freeze_mix(self.op_mix))
        object.__setattr__(
            self, "size_model", MappingProxyType({OpKind(k): v for k, v in dict(self.size_model).items()})
        )
        self.check()

    def check(self) -> None:
        bad = set(self.op_mix) - set(MIX_KINDS)
        if bad:
            raise InvalidSpec(f"op_mix may only contain read/write/lseek/meta, got {sorted(map(str, bad))}")
        if any(v < 0 or not math.isfinite(v) for v in self.op_mix.values()):
            raise InvalidSpec("op_mix fractions must be finite and >= 0")
        total = sum(self.op_mix.values())
        if abs(total - 1) > 1e-9:
            raise InvalidSpec(f"op_mix sums to {total!r}, expected 1")
        for k in (OpKind.READ, OpKind.WRITE):
            if self.op_mix.get(k, 0) > 0 and k not in self.size_model:
                raise InvalidSpec(f"no size model for {k}")
        for name in ("n_files", "file_size_bytes", "n_threads", "n_events", "region_bytes", "align_bytes"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if self.region_ops < 1:
            raise InvalidSpec("region_ops must be >= 1")
        if self.seed < 0:
            raise InvalidSpec("seed must be >= 0")
        if self.op_latency_ns < 0 or self.lseek_latency_ns < 0:
            raise InvalidSpec("latencies must be >= 0")

    def with_(self, **changes) -> "GenSpec":
        return replace(self, **changes)

    # flat key=value form -------------------------------------------------

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "op_mix":
                v = ",".join(f"{k.value}:{x!r}" for k, x in v.items())
            elif f.name == "size_model":
                v = ";".join(f"{k.value}:{m}" for k, m in v.items())
            out[f.name] = str(v)
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: "GenSpec | None" = None) -> "GenSpec":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, text in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise InvalidSpec(f"unknown key {key!r}")
            text = str(text).strip()
            try:
                if key == "op_mix":
                    kw[key] = _parse_mix(text)
                elif key == "size_model":
                    kw[key] = _parse_sizes(text)
                elif key == "think_model":
                    kw[key] = ThinkModel.parse(text)
                elif key == "region_ops":
                    kw[key] = float(text)
                elif key == "stream_id":
                    kw[key] = text
                elif key.endswith("_bytes"):
                    kw[key] = parse_bytes(text)
                else:
                    kw[key] = int(text.replace("_", ""))
            except ValueError as e:
                raise InvalidSpec(f"{key}: {e}") from None
        if base is not None:
            if "size_model" in kw:
                kw["size_model"] = {**base.size_model, **kw["size_model"]}
            return replace(base, **kw)
        if "op_mix" not in kw:
            raise InvalidSpec("op_mix is required")
        return cls(**kw)


def _parse_mix(text: str) -> dict[OpKind, float]:
    mix = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        k, sep, v = part.partition(":")
        if not sep:
            raise InvalidSpec(f"op_mix entry {part!r} is not kind:fraction")
        try:
            mix[OpKind(k.strip().lower())] = float(v)
        except ValueError:
            raise InvalidSpec(f"bad op_mix entry {part!r}") from None
    return mix


def _parse_sizes(text: str) -> dict[OpKind, SizeModel]:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        k, sep, v = part.partition(":")
        if not sep:
            raise InvalidSpec(f"size_model entry {part!r} is not kind:model")
        try:
            out[OpKind(k.strip().lower())] = SizeModel.parse(v)
        except ValueError:
            raise InvalidSpec(f"bad size_model entry {part!r}") from None
    return out


def read_config(path) -> dict[str, str]:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise InvalidSpec(f"{path}:{n}: expected key = value")
            values[key.strip()] = val.strip()
    return values


def load_spec(path, base: GenSpec | None = None) -> GenSpec:
    return GenSpec.from_mapping(read_config(path), base=base)


def _maxdb_init() -> GenSpec:
    # the raw weights sum to 100.004, so normalize
    raw = {OpKind.READ: 2.3, OpKind.WRITE: 48.0, OpKind.LSEEK: 49.7, OpKind.META: 0.004}
    total = sum(raw.values())
    return GenSpec(
        op_mix={k: v / total for k, v in raw.items()},
        size_model={
            OpKind.READ: SizeModel.lognormal_mean(6884, 0.5),
            OpKind.WRITE: SizeModel.lognormal_mean(7995, 0.5),
        },
        think_model=ThinkModel("exponential", 11e6),
        n_files=4,
        file_size_bytes=64 * MiB,
        n_threads=1,
        n_events=100_000,
        seed=0,
    )


PRESETS: Mapping[str, GenSpec] = MappingProxyType({"maxdb-init": _maxdb_init()})

# targets the maxdb-init preset is calibrated against
MAXDB_TARGET_FRACTIONS = {OpKind.READ: 0.023, OpKind.WRITE: 0.48, OpKind.LSEEK: 0.497}
MAXDB_TARGET_MEAN_BYTES = {OpKind.READ: 6884, OpKind.WRITE: 7995}


def resolve_spec(name_or_path: str) -> GenSpec:
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    return load_spec(name_or_path)


def generate(spec: GenSpec) -> IoStream:
    spec.check()
    rng = np.random.default_rng(spec.seed)
    kinds = [k for k in MIX_KINDS if spec.op_mix.get(k, 0) > 0]
    probs = np.array([spec.op_mix[k] for k in kinds])
    probs = probs / probs.sum()
    n = spec.n_events
    draws = rng.choice(len(kinds), size=n, p=probs)
    gaps = spec.think_model.sample(rng, n + 2 * spec.n_files * spec.n_threads)
    sizes = {
        k: spec.size_model[k].sample(rng, n) if k in spec.size_model else None
        for k in (OpKind.READ, OpKind.WRITE)
    }
    jumps = rng.random(n) < 1.0 / spec.region_ops
    regions_per_file = max(1, spec.file_size_bytes // spec.region_bytes)
    slots_per_region = max(1, spec.region_bytes // spec.align_bytes)
    region_draw = rng.integers(0, spec.n_files * regions_per_file, size=n + spec.n_threads)
    slot_draw = rng.integers(0, slots_per_region, size=n)

    events: list[TraceEvent] = []
    gap_i = 0
    for t in range(spec.n_threads):
        tid = spec.pid + 1 + t
        fd0 = 3 + t * spec.n_files
        clock = 0
        first = True

        def emit(op, **kw):
            nonlocal clock, first, gap_i
            if not first:
                clock += int(gaps[gap_i])
                gap_i += 1
            first = False
            lat = spec.lseek_latency_ns if op is OpKind.LSEEK else spec.op_latency_ns
            events.append(
                TraceEvent(
                    stream_id=spec.stream_id,
                    pid=spec.pid,
                    tid=tid,
                    op=op,
                    t_start=clock,
                    t_end=clock + lat,
                    **kw,
                )
            )
            clock += lat

        for f in range(spec.n_files):
            emit(OpKind.OPEN, fd=fd0 + f, path=f"db/data{f:03d}")
        region = int(region_draw[n + t])
        for i in range(t, n, spec.n_threads):
            kind = kinds[draws[i]]
            fd = fd0 + region // regions_per_file
            if kind is OpKind.LSEEK:
                if jumps[i]:
                    region = int(region_draw[i])
                    fd = fd0 + region // regions_per_file
                base = (region % regions_per_file) * spec.region_bytes
                emit(kind, fd=fd, offset=base + int(slot_draw[i]) * spec.align_bytes)
            elif kind is OpKind.META:
                emit(kind, fd=fd)
            else:
                emit(kind, fd=fd, nbytes=int(sizes[kind][i]))
        for f in range(spec.n_files):
            emit(OpKind.CLOSE, fd=fd0 + f)
    return IoStream.build(events, stream_id=spec.stream_id, strict=True)
