"""Frame index selection: local window sampling vs. whole-video global sampling.

Global sampling partitions the source video into num_frames equal segments
and draws one frame uniformly per segment, so a clip sees the entire video.
Local sampling draws a consecutive window around a uniform center, the
conventional strategy it replaces.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplingPlan:
    method: str = "global"  # "global" | "local"
    num_frames: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("global", "local"):
            raise ValueError(f"unknown sampling method {self.method!r}")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")


def _pad_short(length: int, num_frames: int) -> list[int]:
    # source shorter than the clip: full range, last index repeated
    return list(range(length)) + [length - 1] * (num_frames - length)


def global_sample(source_length: int, plan: SamplingPlan) -> list[int]:
    """One uniformly random frame per segment [i*L/T, (i+1)*L/T)."""
    L, T = source_length, plan.num_frames
    if L <= 0:
        raise ValueError(f"source_length must be positive, got {L}")
    if L < T:
        return _pad_short(L, T)
    rng = np.random.default_rng(plan.seed)
    out = []
    for i in range(T):
        lo = (i * L) // T
        hi = ((i + 1) * L) // T
        out.append(int(rng.integers(lo, hi)))
    return out


def local_sample(source_length: int, plan: SamplingPlan) -> list[int]:
    """T consecutive frames around a uniform center, clamped to the video."""
    L, T = source_length, plan.num_frames
    if L <= 0:
        raise ValueError(f"source_length must be positive, got {L}")
    rng = np.random.default_rng(plan.seed)
    if L < T:
        return _pad_short(L, T)
    center = int(rng.integers(0, L))
    start = min(max(center - T // 2, 0), L - T)
    return list(range(start, start + T))


def sample_frames(source_length: int, plan: SamplingPlan) -> list[int]:
    if plan.method == "global":
        return global_sample(source_length, plan)
    return local_sample(source_length, plan)


def derive_seed(base_seed: int, *tags) -> int:
    """Stable per-(video, step, ...) seed derivation for independent draws."""
    key = ":".join([str(base_seed)] + [str(t) for t in tags])
    return zlib.crc32(key.encode()) & 0x7FFFFFFF
