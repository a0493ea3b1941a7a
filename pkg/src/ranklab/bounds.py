"""Probability bounds linking sampled losses to ranking metrics.

For a target at pessimistic rank r in a catalog of N items, a uniformly
sampled item beats-or-ties the target with probability p = r/N. Grouping
K draws into g blocks and asking for one hit per block gives

    P(at least g hits)  >=  1 - g * (1 - p)^floor(K/g),

and with g chosen from the metric's needs this lower-bounds the
probability that the sampled loss dominates -log of the metric:

  * NDCG, unscaled sampled softmax:  g = m,            m = ceil(log2(r+1))
  * NDCG, alpha-scaled:              g = ceil(m/alpha)
  * MRR,  alpha-scaled:              g = ceil(2^m/alpha)

m is the smallest integer with 2^m - 1 >= r, so log(1+m hits) already
reaches -log NDCG = log log2(1+r). Bounds are reported clipped to zero
with the raw value kept alongside; everything integer goes through exact
integer/rational arithmetic and (1-p)^n is exp(n*log1p(-p)).

The exact binomial tail is the independent oracle for the grouping
inequality, and mc_verify checks the end-to-end claim by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import losses, metrics, sampling


class BoundQueryError(ValueError):
    """Invalid bound query parameters."""


@dataclass(frozen=True)
class BoundQuery:
    r_plus: int
    sample_count: int
    catalog_size: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.r_plus < 1:
            raise BoundQueryError("rank must be >= 1")
        if self.catalog_size < self.r_plus:
            raise BoundQueryError("rank cannot exceed the catalog size")
        if self.sample_count < 1:
            raise BoundQueryError("sample count must be >= 1")
        if not (self.alpha >= 1 and math.isfinite(self.alpha)):
            raise BoundQueryError("alpha must be finite and >= 1")

    @property
    def hit_probability(self) -> float:
        return self.r_plus / self.catalog_size


@dataclass(frozen=True)
class BoundEstimate:
    probability: float  # clipped to [0, 1]
    raw: float          # the unclipped closed-form value


def m_of_rank(r_plus: int) -> int:
    """Smallest m with 2^m - 1 >= r_plus (so r_plus <= 2^m - 1)."""
    if r_plus < 1:
        raise BoundQueryError("rank must be >= 1")
    m = (r_plus + 1).bit_length()
    if (1 << (m - 1)) == r_plus + 1:
        return m - 1
    return m


def _grouped_bound(groups: int, p: float, sample_count: int) -> float:
    # 1 - groups * (1-p)^floor(K/groups); the power via exp(n*log1p(-p)).
    n = sample_count // groups
    if p >= 1.0:
        pw = 1.0 if n == 0 else 0.0
    else:
        pw = math.exp(n * math.log1p(-p))
    return 1.0 - groups * pw


def _clip(raw: float) -> BoundEstimate:
    return BoundEstimate(probability=min(1.0, max(0.0, raw)), raw=raw)


def ssm_bound_ndcg(query: BoundQuery) -> BoundEstimate:
    """P(sampled-softmax loss >= -log NDCG) lower bound (alpha = 1)."""
    if query.alpha != 1.0:
        raise BoundQueryError("the unscaled bound is defined for alpha = 1")
    m = m_of_rank(query.r_plus)
    return _clip(_grouped_bound(m, query.hit_probability, query.sample_count))


def sce_bound_ndcg(query: BoundQuery) -> BoundEstimate:
    """P(alpha-scaled sampled loss >= -log NDCG) lower bound."""
    m = m_of_rank(query.r_plus)
    groups = math.ceil(Fraction(m) / Fraction(query.alpha))
    return _clip(_grouped_bound(groups, query.hit_probability, query.sample_count))


def sce_bound_mrr(query: BoundQuery) -> BoundEstimate:
    """P(alpha-scaled sampled loss >= -log MRR) lower bound.

    MRR decays faster than NDCG, so the group count is ceil(2^m/alpha)
    rather than ceil(m/alpha); the bound is correspondingly weaker.
    """
    m = m_of_rank(query.r_plus)
    groups = math.ceil(Fraction(1 << m) / Fraction(query.alpha))
    return _clip(_grouped_bound(groups, query.hit_probability, query.sample_count))


def binomial_tail_bound(sample_count: int, p: float, m: int) -> float:
    """Closed-form lower bound on P(Binomial(K, p) >= m): 1 - m(1-p)^floor(K/m).

    Unclipped; m = 0 gives 1 exactly. This is the grouping inequality the
    metric bounds are built from.
    """
    if sample_count < 1:
        raise BoundQueryError("sample count must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise BoundQueryError("p must lie in [0, 1]")
    if m < 0:
        raise BoundQueryError("m must be >= 0")
    if m == 0:
        return 1.0
    return _grouped_bound(m, p, sample_count)


def exact_binomial_tail(sample_count: int, p: float, m: int) -> float:
    """P(Binomial(K, p) >= m) summed exactly in the log domain.

    Oracle for the grouping inequality; K is capped at 1000 to keep the
    term-by-term summation comfortably within double precision.
    """
    if not 1 <= sample_count <= 1000:
        raise BoundQueryError("sample count must lie in [1, 1000]")
    if not 0.0 <= p <= 1.0:
        raise BoundQueryError("p must lie in [0, 1]")
    if m <= 0:
        return 1.0
    if m > sample_count:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    k = sample_count
    lp, lq = math.log(p), math.log1p(-p)
    lgk = math.lgamma(k + 1)
    total = 0.0
    for j in range(m, k + 1):
        lc = lgk - math.lgamma(j + 1) - math.lgamma(k - j + 1)
        total += math.exp(lc + j * lp + (k - j) * lq)
    return min(1.0, total)


@dataclass(frozen=True)
class McReport:
    r_plus: int
    trials: int
    freq_ndcg: float
    freq_mrr: float
    floor_violations: int  # trials where loss < log(1 + alpha * hits)
    bound_ndcg: float
    bound_mrr: float


def mc_verify(scores, target: int, sample_count: int, alpha: float,
              trials: int, seed: int) -> McReport:
    """Monte Carlo check of the metric-domination claims.

    Draws K items per trial uniformly from the full catalog (target
    included, so the per-draw hit probability is exactly r/N), evaluates
    the alpha-scaled sampled loss on them, and reports how often it
    reaches -log NDCG and -log MRR of the full-catalog rank. Each trial
    also checks the pointwise floor log(1 + alpha * hits).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if trials < 1:
        raise BoundQueryError("trials must be positive")
    r_plus = metrics.rank_of_target(scores, target)
    s_plus = float(scores[target])
    thr_ndcg = math.log(math.log2(1.0 + r_plus))  # -log ndcg(r)
    thr_mrr = math.log(float(r_plus))             # -log mrr(r)
    cfg = sampling.SamplerConfig(catalog_size=scores.size, sample_count=sample_count,
                                 exclude_target=False, seed=seed)
    hits_ndcg = 0
    hits_mrr = 0
    floor_violations = 0
    chunk = 4096
    done = 0
    while done < trials:
        count = min(chunk, trials - done)
        ids = sampling.sample_block(cfg, target, done, count)
        neg = scores[ids]
        values = losses.sce_values_batch(s_plus, neg, alpha)
        xi = np.count_nonzero(neg >= s_plus, axis=1)
        floor_violations += int(np.count_nonzero(values < np.log1p(alpha * xi) - 1e-9))
        hits_ndcg += int(np.count_nonzero(values >= thr_ndcg))
        hits_mrr += int(np.count_nonzero(values >= thr_mrr))
        done += count
    q = BoundQuery(r_plus=r_plus, sample_count=sample_count,
                   catalog_size=scores.size, alpha=alpha)
    return McReport(
        r_plus=r_plus,
        trials=trials,
        freq_ndcg=hits_ndcg / trials,
        freq_mrr=hits_mrr / trials,
        floor_violations=floor_violations,
        bound_ndcg=sce_bound_ndcg(q).probability,
        bound_mrr=sce_bound_mrr(q).probability,
    )


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    r_plus: int
    first_violation: dict | None = None


def prop1_audit(scores, target: int, slack: float = 1e-9) -> AuditReport:
    """Check the loss-dominates-metrics chain on one score vector.

    For every n >= rank(target):
        top-n truncated CE  >=  -log MRR  >=  -log NDCG.
    Returns the first violated n, if any.
    """
    scores = np.asarray(scores, dtype=np.float64)
    r_plus = metrics.rank_of_target(scores, target)
    neg_log_mrr = math.log(float(r_plus))
    neg_log_ndcg = math.log(math.log2(1.0 + r_plus))
    if neg_log_mrr < neg_log_ndcg - slack:
        return AuditReport(False, r_plus, {"n": None, "why": "-log MRR < -log NDCG"})
    for n in range(r_plus, scores.size + 1):
        value = losses.ce_topn_loss(scores, target, n).value
        if value < neg_log_mrr - slack:
            return AuditReport(False, r_plus, {
                "n": n, "loss": value, "neg_log_mrr": neg_log_mrr, "why": "loss < -log MRR"})
    return AuditReport(True, r_plus)


DEFAULT_RANKS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
DEFAULT_SAMPLE_COUNTS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


def bound_grid(catalog_size: int, alpha: float, metric: str = "ndcg",
               ranks=DEFAULT_RANKS, sample_counts=DEFAULT_SAMPLE_COUNTS) -> np.ndarray:
    """Clipped bound values over a rank x sample-count grid."""
    if metric not in ("ndcg", "mrr"):
        raise BoundQueryError(f"metric must be 'ndcg' or 'mrr', got {metric!r}")
    fn = sce_bound_ndcg if metric == "ndcg" else sce_bound_mrr
    out = np.empty((len(ranks), len(sample_counts)), dtype=np.float64)
    for i, r in enumerate(ranks):
        for j, k in enumerate(sample_counts):
            q = BoundQuery(r_plus=r, sample_count=k, catalog_size=catalog_size, alpha=alpha)
            out[i, j] = fn(q).probability
    return out


def write_grid_csv(path, ranks, sample_counts, grid: np.ndarray) -> None:
    """CSV layout: header row of sample counts, first column the ranks."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank\\K," + ",".join(str(k) for k in sample_counts) + "\n")
        for i, r in enumerate(ranks):
            fh.write(str(r) + "," + ",".join(f"{v:.6f}" for v in grid[i]) + "\n")
