"""Per-stream start offsets, drawn once and reused across runs."""

from __future__ import annotations

import json
import os

import numpy as np

START_WINDOW_NS = 300 * 1_000_000_000


def uniform_start_offsets(n: int, seed: int, window_ns: int = START_WINDOW_NS) -> list[int]:
    """``n`` offsets uniform on [0, window_ns], a pure function of ``seed``.

    Prefixes are stable: the first k offsets for n streams equal the
    offsets for k streams, so a sweep over stream counts reuses them.
    """
    rng = np.random.default_rng(seed)
    return [int(x) for x in rng.integers(0, window_ns, size=n, endpoint=True)]


def save_offsets(path, offsets, seed: int, window_ns: int = START_WINDOW_NS) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"seed": seed, "window_ns": window_ns, "offsets_ns": list(offsets)}, f, indent=1)


def load_offsets(path) -> list[int]:
    with open(path, encoding="utf-8") as f:
        return [int(x) for x in json.load(f)["offsets_ns"]]


def load_or_create_offsets(path, n: int, seed: int, window_ns: int = START_WINDOW_NS) -> list[int]:
    """Reuse the sidecar at ``path`` if it covers ``n`` streams, else (re)create it."""
    if path and os.path.exists(path):
        offsets = load_offsets(path)
        if len(offsets) >= n:
            return offsets[:n]
    offsets = uniform_start_offsets(n, seed, window_ns)
    if path:
        save_offsets(path, offsets, seed, window_ns)
    return offsets
