"""Figure rendering for the report paths.

Every CLI command that writes delimited output can also render the
matching figure next to it: bound grids become heatmaps, sweeps become
metric-versus-parameter curves, benchmarks a log-log scaling plot and
training runs a loss/validation curve. Figures are a convenience view of
the CSV/JSON files, never a replacement for them.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def bound_heatmap(ranks, sample_counts, grid, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    im = ax.imshow(grid, origin="lower", aspect="auto", vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(sample_counts)), [str(k) for k in sample_counts], rotation=45)
    ax.set_yticks(range(len(ranks)), [str(r) for r in ranks])
    ax.set_xlabel("negatives sampled (K)")
    ax.set_ylabel("target rank")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="bound on P(loss dominates metric)")
    _finish(fig, path)


def sweep_curve(rows: list[dict], param: str, metric: str, path) -> None:
    """Mean +/- sd of ``metric`` against the swept ``param`` across seeds."""
    buckets: dict[float, list[float]] = {}
    for row in rows:
        try:
            x = float(row[param])
            y = float(row[metric])
        except (KeyError, TypeError, ValueError):
            continue
        buckets.setdefault(x, []).append(y)
    if not buckets:
        return
    xs = sorted(buckets)
    means = [sum(buckets[x]) / len(buckets[x]) for x in xs]
    sds = [math.sqrt(sum((v - m) ** 2 for v in buckets[x]) / len(buckets[x]))
           for x, m in zip(xs, means)]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(xs, means, yerr=sds, marker="o", capsize=3)
    ax.set_xlabel(param)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} vs {param}")
    if len(xs) > 1 and xs[0] > 0 and xs[-1] / xs[0] >= 100:
        ax.set_xscale("log")
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def bench_plot(rows, path) -> None:
    sizes = [r.catalog_size for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(sizes, [r.ns_full for r in rows], marker="o", label="full catalog")
    ax.plot(sizes, [r.ns_sampled for r in rows], marker="s", label="sampled (K fixed)")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("catalog size")
    ax.set_ylabel("ns per example (loss + gradient)")
    ax.set_title("cost scaling")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _finish(fig, path)


def training_curves(history_dict: dict, eval_metric: str, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    loss = history_dict.get("train_loss", [])
    ax1.plot(range(1, len(loss) + 1), loss)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean train loss")
    ax1.grid(True, alpha=0.3)
    evals = history_dict.get("evals", [])
    xs = [e["epoch"] for e in evals]
    ys = [e["metrics"].get(eval_metric) for e in evals]
    ax2.plot(xs, ys, marker="o")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel(f"val {eval_metric}")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("training run")
    _finish(fig, path)
