"""Deterministic training harness for the loss laboratory.

Given the same data, config and seed, fit() reproduces the same
parameters and metrics bit for bit: example order is shuffled with an
epoch-keyed seed, negatives come from the counter-based sampler keyed by
(epoch, example id), and evaluation reduces over users in id order.

Training examples are every (prefix, next item) pair of each user's
train sequence, histories truncated to the most recent max_len items.
Validation ranks the held-out item after the full train sequence; test
additionally appends the validation item to the history.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses as losses_mod
from . import metrics as metrics_mod
from . import sampling
from .autodiff import Tape, Tensor
from .data import InteractionLog, Split, leave_one_out_split
from .losses import LossSpec, parse_loss
from .models import ModelParams, config_hash, encode_batch, init_params, score_all_batch, score_subset_batch


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss (carries epoch and batch)."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    dim: int = 64
    encoder: str = "gru"
    init: str = "normal"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 256
    max_len: int = 50
    eval_every: int = 5
    early_stop_patience: int = 10
    eval_metric: str = "NDCG@10"
    seed: int = 0

    def loss_spec(self) -> LossSpec:
        return parse_loss(self.loss)

    def to_dict(self) -> dict:
        return {
            "loss": self.loss, "dim": self.dim, "encoder": self.encoder,
            "init": self.init, "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay, "epochs": self.epochs,
            "batch_size": self.batch_size, "max_len": self.max_len,
            "eval_every": self.eval_every, "early_stop_patience": self.early_stop_patience,
            "eval_metric": self.eval_metric, "seed": self.seed,
        }


def config_from_dict(d: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return TrainConfig(**d)


class Adam:
    """Adam with decoupled weight decay.

    Moments are kept per parameter tensor in declared order; the step
    count is shared. Weight decay multiplies the parameter directly
    (p -= lr * wd * p) instead of entering the gradient.
    """

    def __init__(self, params: list[Tensor], learning_rate: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(learning_rate)
        self.wd = float(weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: ad.Gradients) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.of(p)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)
            if self.wd != 0.0:
                update = update + self.lr * self.wd * p.data
            p.data -= update


@dataclass(frozen=True)
class TrainExample:
    user: int
    history: tuple[int, ...]
    target: int


def make_training_examples(split: Split, max_len: int) -> list[TrainExample]:
    out: list[TrainExample] = []
    for user, seq in enumerate(split.train):
        for j in range(1, len(seq)):
            hist = tuple(seq[max(0, j - max_len):j])
            out.append(TrainExample(user=user, history=hist, target=seq[j]))
    return out


@dataclass
class RunHistory:
    train_loss: list[float] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)  # {"epoch": int, "metrics": {...}}
    best_epoch: int = 0
    best_value: float = -math.inf
    test_metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "evals": self.evals,
            "best_epoch": self.best_epoch,
            "best_value": self.best_value,
            "test_metrics": self.test_metrics,
        }


def _batch_loss(params: ModelParams, spec: LossSpec, histories, targets,
                neg_ids: np.ndarray | None) -> Tensor:
    hidden = encode_batch(params, histories)
    if spec.needs_full_catalog:
        scores = score_all_batch(params, hidden)
        return losses_mod.full_loss_graph(spec, scores, targets)
    id_matrix = np.concatenate([np.asarray(targets, dtype=np.int64)[:, None], neg_ids], axis=1)
    subset = score_subset_batch(params, hidden, id_matrix)
    return losses_mod.sampled_loss_graph(spec, subset, nce_offset=params.nce_offset,
                                         catalog_size=params.item_count)


def train_epoch(params: ModelParams, examples: list[TrainExample], cfg: TrainConfig,
                adam: Adam, epoch: int) -> float:
    """One pass over the examples; returns the mean per-example loss."""
    spec = cfg.loss_spec()
    order = np.random.default_rng((cfg.seed & ((1 << 64) - 1), 0xE70C, epoch)).permutation(len(examples))
    k = spec.negatives_per_example
    sampler_cfg = None
    if k:
        sampler_cfg = sampling.SamplerConfig(catalog_size=params.item_count, sample_count=k,
                                             exclude_target=True, seed=cfg.seed)
    total = 0.0
    for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        batch = [examples[i] for i in idx]
        histories = [list(ex.history) for ex in batch]
        targets = np.array([ex.target for ex in batch], dtype=np.int64)
        neg_ids = None
        if k:
            neg_ids = np.empty((len(batch), k), dtype=np.int64)
            base = epoch * len(examples)
            for row, i in enumerate(idx):
                neg_ids[row] = sampling.sample_uniform(sampler_cfg, examples[i].target, base + int(i))
        with Tape():
            loss = _batch_loss(params, spec, histories, targets, neg_ids)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, batch_no)
            grads = ad.backward(loss)
        adam.step(grads)
        total += value * len(batch)
    return total / len(examples)


def _eval_histories(split: Split, phase: str, max_len: int) -> list[list[int]]:
    if phase == "val":
        return [seq[-max_len:] if seq else seq for seq in split.train]
    if phase == "test":
        return [(seq + [v])[-max_len:] for seq, v in zip(split.train, split.val)]
    raise ValueError(f"phase must be 'val' or 'test', got {phase!r}")


def evaluate(params: ModelParams, split: Split, phase: str, max_len: int = 50,
             batch_size: int = 512) -> metrics_mod.MetricReport:
    """Full-catalog evaluation; ranks use pessimistic ties, users in id order."""
    histories = _eval_histories(split, phase, max_len)
    targets = split.val if phase == "val" else split.test
    ranks: list[int] = []
    for start in range(0, len(histories), batch_size):
        hs = histories[start:start + batch_size]
        ts = np.asarray(targets[start:start + batch_size], dtype=np.int64)
        hidden = encode_batch(params, hs)
        scores = score_all_batch(params, hidden).data
        tgt = scores[np.arange(len(hs)), ts]
        ranks.extend(int(c) for c in (scores >= tgt[:, None]).sum(axis=1))
    return metrics_mod.aggregate(ranks)


def _snapshot(params: ModelParams) -> list[np.ndarray]:
    return [p.data.copy() for p in params.parameters()]


def _restore(params: ModelParams, snap: list[np.ndarray]) -> None:
    for p, arr in zip(params.parameters(), snap):
        p.data = arr.copy()


def fit(log: InteractionLog, cfg: TrainConfig,
        split: Split | None = None) -> tuple[ModelParams, RunHistory]:
    """Train to the best validation checkpoint and score it on test.

    Evaluates at epoch 0 and every eval_every epochs after, keeps the
    parameters with the best validation eval_metric, and stops once
    early_stop_patience evaluations pass without improvement (patience 0
    therefore returns the initial parameters). Raises DivergenceError on
    a non-finite training loss.
    """
    spec = cfg.loss_spec()  # validates the loss string up front
    if split is None:
        split = leave_one_out_split(log)
    params = init_params(log.item_count, cfg.dim, cfg.encoder, cfg.seed, init=cfg.init,
                         with_nce_offset=(spec.kind == "nce"))
    examples = make_training_examples(split, cfg.max_len)
    if not examples:
        raise ValueError("no training examples; sequences are too short")
    adam = Adam(params.parameters(), cfg.learning_rate, cfg.weight_decay)
    history = RunHistory()

    def run_eval(epoch: int) -> bool:
        report = evaluate(params, split, "val", max_len=cfg.max_len)
        history.evals.append({"epoch": epoch, "metrics": dict(report.means)})
        value = report.means[cfg.eval_metric]
        if value > history.best_value:
            history.best_value = value
            history.best_epoch = epoch
            best[0] = _snapshot(params)
            since[0] = 0
        else:
            since[0] += 1
        return since[0] >= cfg.early_stop_patience

    best: list[list[np.ndarray] | None] = [None]
    since = [0]
    stop = run_eval(0)
    if not stop:
        for epoch in range(1, cfg.epochs + 1):
            history.train_loss.append(train_epoch(params, examples, cfg, adam, epoch))
            if epoch % cfg.eval_every == 0 and run_eval(epoch):
                break
    if best[0] is not None:
        _restore(params, best[0])
    test_report = evaluate(params, split, "test", max_len=cfg.max_len)
    history.test_metrics = dict(test_report.means)
    return params, history


def run_id_for(cfg: TrainConfig) -> str:
    return config_hash(cfg.to_dict())[:12]


# ---------------------------------------------------------------------------
# sweeps


SWEEP_FIXED_COLUMNS = ("run_id", "loss")
SWEEP_TAIL_COLUMNS = ("seed", "best_epoch") + metrics_mod.METRIC_COLUMNS


def _one_sweep_run(args) -> tuple[dict, str | None]:
    log, cfg, overrides = args
    label = {**overrides, "seed": cfg.seed}
    try:
        _, history = fit(log, cfg)
        row = {
            "run_id": run_id_for(cfg),
            "loss": cfg.loss,
            **{k: v for k, v in overrides.items() if k != "loss"},
            "seed": cfg.seed,
            "best_epoch": history.best_epoch,
            **{name: f"{history.test_metrics[name]:.6f}" for name in metrics_mod.METRIC_COLUMNS},
        }
        return row, None
    except Exception as exc:  # individual failures must not kill the sweep
        return {"config": label}, f"{type(exc).__name__}: {exc}"


def worker_count() -> int:
    raw = os.environ.get("RANKLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def sweep(log: InteractionLog, base: TrainConfig, grid: dict[str, list],
          seeds: list[int]) -> tuple[list[dict], list[dict]]:
    """Cartesian product of grid values x seeds, one fit per cell.

    Returns (rows, errors): result rows in grid order, and per-run error
    records for fits that raised. RANKLAB_THREADS > 1 runs fits in
    parallel worker processes; results keep grid order either way.
    """
    for key in grid:
        if key not in TrainConfig.__dataclass_fields__:
            raise ValueError(f"unknown sweep parameter {key!r}")
    names = sorted(grid)
    jobs = []
    for combo in itertools.product(*(grid[n] for n in names)):
        overrides = dict(zip(names, combo))
        for seed in seeds:
            cfg = replace(base, **overrides, seed=seed)
            jobs.append((log, cfg, overrides))
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_sweep_run, jobs))
    else:
        results = [_one_sweep_run(job) for job in jobs]
    rows = [row for row, err in results if err is None]
    errors = [{"config": row.get("config"), "error": err} for row, err in results if err is not None]
    return rows, errors


def sweep_csv(rows: list[dict], grid_keys: list[str]) -> str:
    """Render sweep rows with the swept parameters as middle columns."""
    param_cols = [k for k in sorted(grid_keys) if k != "loss"]
    header = list(SWEEP_FIXED_COLUMNS) + param_cols + list(SWEEP_TAIL_COLUMNS)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row.get(col, "")) for col in header))
    return "\n".join(lines) + "\n"


def save_history(history: RunHistory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(history.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
