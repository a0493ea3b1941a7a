"""Deterministic uniform negative sampling.

Every draw is keyed by (seed, draw_index): the stream for a given index
is a PCG64 generator seeded from that pair, so any draw can be reproduced
in isolation and disjoint index ranges can be consumed concurrently
without shared state. Sampling is with replacement; excluding the target
draws from a catalog of size N-1 and shifts ids at or above the target
up by one, which keeps the remaining items exactly uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SamplerConfig:
    catalog_size: int
    sample_count: int
    exclude_target: bool
    seed: int

    def __post_init__(self):
        if self.catalog_size < 1:
            raise ValueError("catalog_size must be positive")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.exclude_target and self.catalog_size < 2:
            raise ValueError("cannot exclude the target from a catalog of one item")


def _rng(seed: int, draw_index: int) -> np.random.Generator:
    if draw_index < 0:
        raise ValueError("draw_index must be non-negative")
    ss = np.random.SeedSequence((seed & _MASK64, draw_index))
    return np.random.Generator(np.random.PCG64(ss))


def sample_uniform(cfg: SamplerConfig, target: int, draw_index: int) -> np.ndarray:
    """K uniform item ids for one draw, with replacement."""
    if not 0 <= target < cfg.catalog_size:
        raise ValueError(f"target {target} out of range for catalog of {cfg.catalog_size}")
    rng = _rng(cfg.seed, draw_index)
    if cfg.exclude_target:
        ids = rng.integers(0, cfg.catalog_size - 1, size=cfg.sample_count)
        ids[ids >= target] += 1
    else:
        ids = rng.integers(0, cfg.catalog_size, size=cfg.sample_count)
    return ids.astype(np.int64, copy=False)


def sample_block(cfg: SamplerConfig, target: int, first_index: int, count: int) -> np.ndarray:
    """Stack draws first_index .. first_index+count-1 into a [count x K] matrix.

    Row i is bitwise identical to sample_uniform(cfg, target, first_index+i).
    """
    out = np.empty((count, cfg.sample_count), dtype=np.int64)
    for i in range(count):
        out[i] = sample_uniform(cfg, target, first_index + i)
    return out
