"""The softmax-family ranking losses in one normal form.

Every loss here is written as

    value = -s_plus + normalizer_log

where s_plus is the target item's score and normalizer_log is the log of
that loss's effective partition term. Separating the normalizer is what
makes the family comparable: full cross entropy sums over the whole
catalog, the truncated variants sum over a score- or rank-selected
subset, and the sampled variants replace the catalog sum with K drawn
negatives (optionally scaled by a weight alpha, which is what buys the
sampled loss its much tighter ranking-bound guarantee).

Two parallel surfaces live here. The plain-array functions return a
:class:`LossValue` and are the reference evaluation path (analysis,
bound verification, tests). The ``*_graph`` builders assemble the same
quantities from autodiff tensors for training; each is the batched mean
over rows and is pinned to the reference path by tests.

Binary cross entropy and the pairwise ranking loss take exactly one
sampled negative, the noise-contrastive variant applies the corrected
score s' = s - c - log(K/N) with a trainable offset c, and the sampled
variants never form raw exponentials outside a max-shifted sum.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class LossConfigError(ValueError):
    """Malformed loss configuration string or invalid parameters."""


_LOSS_KINDS = ("ce", "ce_topn", "ce_eta", "bce", "bpr", "nce", "ssm", "sce")


@dataclass(frozen=True)
class LossSpec:
    """Parsed loss configuration.

    String grammar: ``ce``, ``ce-top:{n}``, ``ce-eta:{eta}``, ``bce``,
    ``bpr``, ``nce:{K}``, ``ssm:{K}``, ``sce:{K}:{alpha}``.
    """

    kind: str
    top_n: int | None = None
    eta: float | None = None
    sample_count: int | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in _LOSS_KINDS:
            raise LossConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "ce_topn" and (self.top_n is None or self.top_n < 1):
            raise LossConfigError("ce-top needs a cutoff n >= 1")
        if self.kind == "ce_eta" and (self.eta is None or self.eta < 0):
            raise LossConfigError("ce-eta needs a threshold eta >= 0")
        if self.kind in ("nce", "ssm", "sce") and (self.sample_count is None or self.sample_count < 1):
            raise LossConfigError(f"{self.kind} needs a sample count K >= 1")
        if self.kind == "sce" and (self.alpha is None or self.alpha < 1):
            raise LossConfigError("sce needs a weight alpha >= 1")

    @property
    def needs_full_catalog(self) -> bool:
        return self.kind in ("ce", "ce_topn", "ce_eta")

    @property
    def negatives_per_example(self) -> int:
        if self.kind in ("bce", "bpr"):
            return 1
        if self.kind in ("nce", "ssm", "sce"):
            return int(self.sample_count)
        return 0

    def config_string(self) -> str:
        if self.kind == "ce":
            return "ce"
        if self.kind == "ce_topn":
            return f"ce-top:{self.top_n}"
        if self.kind == "ce_eta":
            return f"ce-eta:{self.eta:g}"
        if self.kind in ("bce", "bpr"):
            return self.kind
        if self.kind == "ssm":
            return f"ssm:{self.sample_count}"
        if self.kind == "nce":
            return f"nce:{self.sample_count}"
        return f"sce:{self.sample_count}:{self.alpha:g}"


_INT = re.compile(r"^\d+$")


def parse_loss(text: str) -> LossSpec:
    """Parse the loss config-string grammar (see :class:`LossSpec`)."""
    parts = text.strip().lower().split(":")
    head, args = parts[0], parts[1:]

    def want(n: int):
        if len(args) != n:
            raise LossConfigError(f"loss {text!r}: expected {n} parameter(s), got {len(args)}")

    def as_int(s: str) -> int:
        if not _INT.match(s):
            raise LossConfigError(f"loss {text!r}: {s!r} is not a positive integer")
        return int(s)

    def as_float(s: str) -> float:
        try:
            v = float(s)
        except ValueError:
            raise LossConfigError(f"loss {text!r}: {s!r} is not a number") from None
        if not math.isfinite(v):
            raise LossConfigError(f"loss {text!r}: parameter must be finite")
        return v

    if head == "ce":
        want(0)
        return LossSpec("ce")
    if head == "ce-top":
        want(1)
        return LossSpec("ce_topn", top_n=as_int(args[0]))
    if head == "ce-eta":
        want(1)
        return LossSpec("ce_eta", eta=as_float(args[0]))
    if head in ("bce", "bpr"):
        want(0)
        return LossSpec(head)
    if head in ("nce", "ssm"):
        want(1)
        return LossSpec(head, sample_count=as_int(args[0]))
    if head == "sce":
        want(2)
        return LossSpec("sce", sample_count=as_int(args[0]), alpha=as_float(args[1]))
    raise LossConfigError(f"unknown loss {text!r}")


@dataclass(frozen=True)
class LossValue:
    """One evaluated loss with its normalizer split out.

    ``value + s_plus == normalizer_log`` holds by construction; for the
    noise-contrastive loss normalizer_log is the normalizer of the
    unified form, i.e. the score correction is absorbed into it.
    """

    value: float
    normalizer_log: float


# ---------------------------------------------------------------------------
# reference (plain array) path


def _check_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise LossConfigError(f"scores must be a non-empty vector, got shape {scores.shape}")
    return scores


def _lse(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def ce_loss(scores, target: int) -> LossValue:
    """Full-catalog cross entropy: normalizer sums over every item."""
    scores = _check_scores(scores)
    z = _lse(scores)
    return LossValue(z - float(scores[target]), z)


def _top_cut(scores: np.ndarray, n: int) -> np.ndarray:
    # Deterministic rank order: score descending, item id ascending.
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:n]


def ce_topn_loss(scores, target: int, n: int) -> LossValue:
    """Cross entropy truncated to the n top-ranked items.

    The cut is the first n items under (score desc, id asc). Pessimistic
    ranking counts every tie, so whenever n >= rank(target) the target is
    inside the cut automatically; for smaller n the value is still
    defined, it just no longer dominates -log of the metrics.
    """
    scores = _check_scores(scores)
    if n < 1:
        raise LossConfigError("ce-top cutoff must be >= 1")
    cut = _top_cut(scores, min(n, scores.size))
    z = _lse(scores[cut])
    return LossValue(z - float(scores[target]), z)


def ce_eta_loss(scores, target: int, eta: float) -> LossValue:
    """Cross entropy truncated by score: keep items with s_v - s_+ >= -eta|s_+|.

    The target itself always satisfies the inequality, so the retained
    set is never empty. A full score pass is still required; truncation
    buys bound tightness, not compute.
    """
    scores = _check_scores(scores)
    if eta < 0:
        raise LossConfigError("ce-eta threshold must be >= 0")
    s_plus = float(scores[target])
    keep = scores - s_plus >= -eta * abs(s_plus)
    z = _lse(scores[keep])
    return LossValue(z - s_plus, z)


def bce_loss(s_plus: float, s_minus: float) -> LossValue:
    """Binary cross entropy on the target and one sampled negative."""
    value = _softplus(-s_plus) + _softplus(s_minus)
    return LossValue(value, value + s_plus)


def bpr_loss(s_plus: float, s_minus: float) -> LossValue:
    """Pairwise logistic ranking loss on one sampled negative."""
    value = _softplus(s_minus - s_plus)
    return LossValue(value, value + s_plus)


def nce_loss(s_plus: float, neg_scores, offset: float, catalog_size: int) -> LossValue:
    """Noise-contrastive estimation with corrected scores.

    Scores are shifted to s' = s - c - log(K/N) before the binary terms,
    where c is a trainable offset and K/N the uniform noise ratio.
    """
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise LossConfigError("nce needs at least one sampled negative")
    if catalog_size < 1:
        raise LossConfigError("nce needs the catalog size")
    corr = offset + math.log(neg.size / catalog_size)
    value = _softplus(-(s_plus - corr)) + float(np.sum(
        np.maximum(neg - corr, 0.0) + np.log1p(np.exp(-np.abs(neg - corr)))))
    return LossValue(value, value + s_plus)


def ssm_loss(s_plus: float, neg_scores) -> LossValue:
    """Sampled softmax: the catalog sum replaced by K drawn negatives."""
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise LossConfigError("ssm needs at least one sampled negative")
    z = _lse(np.concatenate(([s_plus], neg)))
    return LossValue(z - s_plus, z)


def sce_loss(s_plus: float, neg_scores, alpha: float) -> LossValue:
    """Scaled sampled softmax: negatives weighted by alpha >= 1.

    value = log(1 + alpha * sum_i e^{s_i - s_plus}), always non-negative
    and at least log(1 + alpha * #{i : s_i >= s_plus}).
    """
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise LossConfigError("sce needs at least one sampled negative")
    if alpha < 1:
        raise LossConfigError("sce weight alpha must be >= 1")
    diffs = neg - s_plus
    m = max(0.0, float(np.max(diffs)) + math.log(alpha))
    value = m + math.log(math.exp(-m) + float(np.sum(np.exp(diffs + math.log(alpha) - m))))
    return LossValue(value, value + s_plus)


def sce_values_batch(s_plus: float, neg_matrix: np.ndarray, alpha: float) -> np.ndarray:
    """sce_loss values for many draws at once; row i matches sce_loss(s_plus, neg_matrix[i], alpha).

    Fast path for Monte Carlo verification; pinned to sce_loss by tests.
    """
    diffs = np.asarray(neg_matrix, dtype=np.float64) - s_plus
    la = math.log(alpha)
    m = np.maximum(0.0, diffs.max(axis=1) + la)
    return m + np.log(np.exp(-m) + np.exp(diffs + (la - m[:, None])).sum(axis=1))


def loss_eval(spec: LossSpec, scores, target: int, sampled_negatives=None,
              nce_offset: float = 0.0, catalog_size: int | None = None) -> LossValue:
    """Evaluate any loss from full-catalog scores and (optionally) sampled ids.

    Full-catalog kinds ignore the sample; sampled kinds read the target
    score and the negatives' scores out of ``scores`` by id. The binary
    kinds require exactly one sampled negative.
    """
    scores = _check_scores(scores)
    if not 0 <= target < scores.size:
        raise LossConfigError(f"target {target} out of range")
    if spec.kind == "ce":
        return ce_loss(scores, target)
    if spec.kind == "ce_topn":
        return ce_topn_loss(scores, target, spec.top_n)
    if spec.kind == "ce_eta":
        return ce_eta_loss(scores, target, spec.eta)

    if sampled_negatives is None:
        raise LossConfigError(f"{spec.kind} needs sampled negative ids")
    ids = np.asarray(sampled_negatives, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise LossConfigError(f"{spec.kind} needs at least one sampled negative")
    s_plus = float(scores[target])
    neg = scores[ids]
    if spec.kind in ("bce", "bpr"):
        if ids.size != 1:
            raise LossConfigError(f"{spec.kind} takes exactly one sampled negative, got {ids.size}")
        return (bce_loss if spec.kind == "bce" else bpr_loss)(s_plus, float(neg[0]))
    if spec.kind == "nce":
        return nce_loss(s_plus, neg, nce_offset, catalog_size or scores.size)
    if spec.kind == "ssm":
        return ssm_loss(s_plus, neg)
    return sce_loss(s_plus, neg, spec.alpha)


# ---------------------------------------------------------------------------
# autodiff (training) path


def _target_mask(shape: tuple[int, int], cols: np.ndarray) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.float64)
    mask[np.arange(shape[0]), cols] = 1.0
    return mask


def full_loss_graph(spec: LossSpec, scores: Tensor, targets) -> Tensor:
    """Batched mean of a full-catalog loss over rows of ``scores`` [B x N].

    The truncated variants select their retained sets from the forward
    values and feed them to the weighted log-sum-exp as constant 0/1
    masks, so gradients flow only through retained scores.
    """
    if not spec.needs_full_catalog:
        raise LossConfigError(f"{spec.kind} is not a full-catalog loss")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    b, n = scores.shape
    if targets.size != b:
        raise LossConfigError("one target per score row required")
    onehot = _target_mask((b, n), targets)
    s_plus = ad.sum_rows(ad.mul(scores, Tensor(onehot)))
    raw = scores.data
    if spec.kind == "ce":
        z = ad.log_sum_exp_rows(scores)
    elif spec.kind == "ce_topn":
        keep = np.zeros((b, n), dtype=np.float64)
        cut = min(spec.top_n, n)
        order = np.lexsort((np.broadcast_to(np.arange(n), (b, n)), -raw), axis=1)
        np.put_along_axis(keep, order[:, :cut], 1.0, axis=1)
        z = ad.log_sum_exp_rows(scores, keep)
    else:
        sp = raw[np.arange(b), targets]
        keep = (raw - sp[:, None] >= -spec.eta * np.abs(sp)[:, None]).astype(np.float64)
        z = ad.log_sum_exp_rows(scores, keep)
    return ad.scale(ad.sum_all(ad.sub(z, s_plus)), 1.0 / b)


def sampled_loss_graph(spec: LossSpec, subset_scores: Tensor,
                       nce_offset: Tensor | None = None,
                       catalog_size: int | None = None) -> Tensor:
    """Batched mean of a sampled loss; column 0 of ``subset_scores`` is the target.

    ``subset_scores`` is [B x (1+K)]. The binary kinds require K = 1; the
    noise-contrastive kind needs the trainable offset tensor and the
    catalog size for its score correction.
    """
    if spec.needs_full_catalog:
        raise LossConfigError(f"{spec.kind} is a full-catalog loss")
    b, c = subset_scores.shape
    k = c - 1
    if k < 1:
        raise LossConfigError("subset must hold the target plus at least one negative")
    onehot = _target_mask((b, c), np.zeros(b, dtype=np.int64))
    s_plus = ad.sum_rows(ad.mul(subset_scores, Tensor(onehot)))

    if spec.kind in ("bce", "bpr"):
        if k != 1:
            raise LossConfigError(f"{spec.kind} takes exactly one negative per example, got {k}")
        s_minus = ad.sum_rows(ad.mul(subset_scores, Tensor(1.0 - onehot)))
        if spec.kind == "bce":
            per = ad.add(ad.softplus(ad.neg(s_plus)), ad.softplus(s_minus))
        else:
            per = ad.softplus(ad.sub(s_minus, s_plus))
    elif spec.kind == "nce":
        if nce_offset is None or catalog_size is None:
            raise LossConfigError("nce needs the trainable offset and the catalog size")
        if spec.sample_count != k:
            raise LossConfigError(f"nce configured for K={spec.sample_count} but got {k} negatives")
        corrected = ad.sub(ad.sub(subset_scores, nce_offset), math.log(k / catalog_size))
        sp_corr = ad.sum_rows(ad.mul(corrected, Tensor(onehot)))
        neg_terms = ad.sum_rows(ad.mul(ad.softplus(corrected), Tensor(1.0 - onehot)))
        per = ad.add(ad.softplus(ad.neg(sp_corr)), neg_terms)
    else:
        if spec.sample_count != k:
            raise LossConfigError(f"{spec.kind} configured for K={spec.sample_count} but got {k}")
        w = np.ones(c, dtype=np.float64)
        if spec.kind == "sce":
            w[1:] = spec.alpha
        z = ad.log_sum_exp_rows(subset_scores, w)
        per = ad.sub(z, s_plus)
    return ad.scale(ad.sum_all(per), 1.0 / b)
