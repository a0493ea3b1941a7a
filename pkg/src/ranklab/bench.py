"""Microbenchmark: full-catalog versus sampled loss-plus-gradient cost.

Times one training example end to end (scoring, loss, backward) for full
cross entropy against the alpha-scaled sampled loss at fixed K. The full
path touches every row of the embedding table twice (forward matmul,
dense gradient), the sampled path touches K+1 rows and keeps its table
gradient as sparse row updates, so the ratio should track N/K up to
constant overhead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as losses_mod
from . import sampling
from .autodiff import Tape, Tensor
from .losses import LossSpec
from .models import ModelParams, score_all_batch, score_subset_batch


@dataclass(frozen=True)
class BenchRow:
    catalog_size: int
    sample_count: int
    ns_full: float
    ns_sampled: float

    @property
    def ratio(self) -> float:
        return self.ns_full / self.ns_sampled


def _params(catalog_size: int, dim: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        item_embeddings=Tensor(rng.standard_normal((catalog_size, dim)) * 0.02, requires_grad=True),
        encoder_kind="mean_pool",
    )


def _time_one(fn, reps: int) -> float:
    # Median of reps single-example runs, in nanoseconds.
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return float(np.median(times))


def bench_pair(catalog_size: int, dim: int = 64, sample_count: int = 100,
               alpha: float = 100.0, reps: int = 5, seed: int = 0) -> BenchRow:
    """One (catalog size, K) measurement of both paths."""
    if catalog_size < 2 or sample_count < 1:
        raise ValueError("need a catalog of at least 2 and K >= 1")
    params = _params(catalog_size, dim, seed)
    rng = np.random.default_rng(seed + 1)
    hidden_row = rng.standard_normal((1, dim)) * 0.1
    target = int(rng.integers(0, catalog_size))
    full_spec = LossSpec("ce")
    k = min(sample_count, catalog_size - 1)
    sampled_spec = LossSpec("sce", sample_count=k, alpha=alpha)
    cfg = sampling.SamplerConfig(catalog_size=catalog_size, sample_count=k,
                                 exclude_target=True, seed=seed)
    neg = sampling.sample_uniform(cfg, target, 0)
    id_row = np.concatenate(([target], neg)).reshape(1, -1)
    targets = np.array([target], dtype=np.int64)

    def run_full():
        hidden = Tensor(hidden_row, requires_grad=False)
        with Tape():
            scores = score_all_batch(params, hidden)
            loss = losses_mod.full_loss_graph(full_spec, scores, targets)
            ad.backward(loss)

    def run_sampled():
        hidden = Tensor(hidden_row, requires_grad=False)
        with Tape():
            subset = score_subset_batch(params, hidden, id_row)
            loss = losses_mod.sampled_loss_graph(sampled_spec, subset,
                                                 catalog_size=catalog_size)
            ad.backward(loss)

    run_full()      # warm up allocator and BLAS before timing
    run_sampled()
    return BenchRow(
        catalog_size=catalog_size,
        sample_count=k,
        ns_full=_time_one(run_full, reps),
        ns_sampled=_time_one(run_sampled, reps),
    )


def bench_scaling(catalog_sizes, dim: int = 64, sample_count: int = 100,
                  alpha: float = 100.0, reps: int = 5, seed: int = 0) -> list[BenchRow]:
    return [bench_pair(n, dim=dim, sample_count=sample_count, alpha=alpha,
                       reps=reps, seed=seed) for n in catalog_sizes]


def bench_csv(rows: list[BenchRow]) -> str:
    lines = ["catalog_size,K,ns_full,ns_sampled,ratio"]
    for r in rows:
        lines.append(f"{r.catalog_size},{r.sample_count},{r.ns_full:.0f},{r.ns_sampled:.0f},{r.ratio:.2f}")
    return "\n".join(lines) + "\n"
