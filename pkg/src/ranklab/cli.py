"""Command-line front end.

Subcommands: prep, train, eval, bounds, verify, bench, sweep. Every
command that writes files takes --out and leaves a manifest.json there;
delimited/JSON outputs are the contract, and report-style outputs also
render a PNG next to the data unless --no-figures is given. Outputs
carry no timestamps, so a command rerun with the same inputs and seed
reproduces its files byte for byte.

Exit codes: 0 success, 2 input error, 3 training divergence,
4 incompatible inputs, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, bench, bounds, data, figures, metrics, training
from .losses import LossConfigError, parse_loss
from .models import CheckpointError, config_hash, load_checkpoint, save_checkpoint
from .training import DivergenceError, TrainConfig, config_from_dict


class InputError(ValueError):
    """Bad file, flag value, or configuration (exit 2)."""


class IncompatibilityError(ValueError):
    """Inputs that do not belong together (exit 4)."""


def _write_manifest(out_dir: str, command: str, config: dict, outputs: list[str]) -> None:
    manifest = {
        "tool": "ranklab",
        "version": __version__,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise InputError(f"expected a comma-separated integer list, got {text!r}") from None
    if not values:
        raise InputError("expected at least one value")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise InputError(f"expected a comma-separated number list, got {text!r}") from None
    if not values:
        raise InputError("expected at least one value")
    return values


def _parse_synth(spec: str) -> dict:
    out: dict = {}
    keys = {"users": int, "items": int, "latent_dim": int, "min_len": int,
            "max_len": int, "seed": int}
    for part in spec.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise InputError(f"synth spec field {part!r} is not key=value")
        key, value = part.split("=", 1)
        key = key.strip()
        if key not in keys:
            raise InputError(f"unknown synth field {key!r}")
        try:
            out[key] = keys[key](value)
        except ValueError:
            raise InputError(f"synth field {key!r}: bad value {value!r}") from None
    for required in ("users", "items"):
        if required not in out:
            raise InputError(f"synth spec needs {required}=")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_prep(args) -> int:
    out_dir = _ensure_out(args.out)
    if bool(args.input) == bool(args.synth):
        raise InputError("exactly one of --input and --synth is required")
    if args.input:
        if not os.path.exists(args.input):
            raise InputError(f"input file {args.input!r} does not exist")
        raw = data.load_tsv(args.input)
        source = {"input": os.path.basename(args.input)}
    else:
        synth = _parse_synth(args.synth)
        log0 = data.synth_generate(
            users=synth["users"], items=synth["items"],
            latent_dim=synth.get("latent_dim", 4),
            seq_len_range=(synth.get("min_len", 5), synth.get("max_len", 15)),
            seed=synth.get("seed", 0))
        raw = data.log_to_raw(log0)
        source = {"synth": synth}
    log = data.k_core_filter(raw, k=args.k_core)
    dataset_path = os.path.join(out_dir, "dataset.json")
    data.save_json(log, dataset_path)
    stats = log.stats()
    for key, value in stats.items():
        print(f"{key}: {value:.4%}" if key == "Density" else f"{key}: {value}")
    _write_manifest(out_dir, "prep", {**source, "k_core": args.k_core}, ["dataset.json"])
    return 0


def _load_train_config(args) -> TrainConfig:
    cfg_dict: dict = {}
    if args.config:
        if not os.path.exists(args.config):
            raise InputError(f"config file {args.config!r} does not exist")
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                cfg_dict = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"config is not valid JSON: {exc}") from None
    if args.loss:
        cfg_dict["loss"] = args.loss
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.epochs is not None:
        cfg_dict["epochs"] = args.epochs
    try:
        cfg = config_from_dict(cfg_dict)
        parse_loss(cfg.loss)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None
    return cfg


def _load_dataset(path: str) -> data.InteractionLog:
    if not os.path.exists(path):
        raise InputError(f"dataset {path!r} does not exist")
    try:
        return data.load_json(path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise InputError(f"bad dataset file: {exc}") from None


def cmd_train(args) -> int:
    out_dir = _ensure_out(args.out)
    cfg = _load_train_config(args)
    log = _load_dataset(args.data)
    params, history = training.fit(log, cfg)
    run_id = training.run_id_for(cfg)
    save_checkpoint(params, os.path.join(out_dir, "checkpoint"), cfg.seed, cfg.to_dict())
    training.save_history(history, os.path.join(out_dir, "history.json"))
    csv_path = os.path.join(out_dir, "metrics.csv")
    report = metrics.MetricReport(means=history.test_metrics, query_count=log.user_count)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(metrics.CSV_HEADER + "\n")
        fh.write(report.csv_row(run_id, cfg.loss, cfg.seed) + "\n")
    outputs = ["checkpoint.json", "checkpoint.bin", "history.json", "metrics.csv"]
    if not args.no_figures:
        figures.training_curves(history.to_dict(), cfg.eval_metric,
                                os.path.join(out_dir, "history.png"))
        outputs.append("history.png")
    _write_manifest(out_dir, "train", cfg.to_dict(), outputs)
    print(f"run {run_id}: best epoch {history.best_epoch}, "
          f"test {cfg.eval_metric} {history.test_metrics[cfg.eval_metric]:.6f}")
    return 0


def cmd_eval(args) -> int:
    log = _load_dataset(args.data)
    try:
        params, header = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load checkpoint: {exc}") from None
    if params.item_count != log.item_count:
        raise IncompatibilityError(
            f"checkpoint has {params.item_count} items, dataset has {log.item_count}")
    split = data.leave_one_out_split(log)
    report = training.evaluate(params, split, args.phase)
    run_id = header.get("config_hash", "eval")[:12]
    lines = [metrics.CSV_HEADER, report.csv_row(run_id, args.loss, header.get("seed", 0))]
    text = "\n".join(lines) + "\n"
    if args.out:
        out_dir = _ensure_out(args.out)
        path = os.path.join(out_dir, f"metrics_{args.phase}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(out_dir, "eval",
                        {"checkpoint": os.path.basename(args.checkpoint),
                         "phase": args.phase}, [os.path.basename(path)])
    sys.stdout.write(text)
    return 0


def cmd_bounds(args) -> int:
    out_dir = _ensure_out(args.out)
    alphas = _float_list(args.alpha)
    if any(a < 1 for a in alphas):
        raise InputError("alpha values must be >= 1")
    ranks = _int_list(args.ranks) if args.ranks else list(bounds.DEFAULT_RANKS)
    counts = _int_list(args.negatives) if args.negatives else list(bounds.DEFAULT_SAMPLE_COUNTS)
    if max(ranks) > args.catalog_size:
        raise InputError("ranks cannot exceed the catalog size")
    outputs = []
    for alpha in alphas:
        grid = bounds.bound_grid(args.catalog_size, alpha, metric=args.metric,
                                 ranks=ranks, sample_counts=counts)
        name = f"bounds_{args.metric}_alpha{alpha:g}"
        bounds.write_grid_csv(os.path.join(out_dir, name + ".csv"), ranks, counts, grid)
        outputs.append(name + ".csv")
        if not args.no_figures:
            figures.bound_heatmap(
                ranks, counts, grid,
                f"{args.metric.upper()} domination bound, alpha={alpha:g}, N={args.catalog_size}",
                os.path.join(out_dir, name + ".png"))
            outputs.append(name + ".png")
    _write_manifest(out_dir, "bounds",
                    {"catalog_size": args.catalog_size, "alpha": alphas,
                     "metric": args.metric, "ranks": ranks, "negatives": counts}, outputs)
    print(f"wrote {len(outputs)} file(s) to {out_dir}")
    return 0


DEFAULT_BATTERY = {
    "catalog_size": 12101,
    "ranks": [1, 5, 50, 500],
    "sample_counts": [10, 100, 1000],
    "alphas": [1.0, 5.0, 100.0],
}


def cmd_verify(args) -> int:
    if args.trials < 1000:
        raise InputError("verification needs at least 1000 trials per cell")
    out_dir = _ensure_out(args.out)
    battery = DEFAULT_BATTERY
    if args.battery != "default":
        if not os.path.exists(args.battery):
            raise InputError(f"battery file {args.battery!r} does not exist")
        with open(args.battery, "r", encoding="utf-8") as fh:
            try:
                battery = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"battery is not valid JSON: {exc}") from None
        for key in ("catalog_size", "ranks", "sample_counts", "alphas"):
            if key not in battery:
                raise InputError(f"battery file missing {key!r}")
    n = int(battery["catalog_size"])
    # A fixed score vector whose top block realizes each requested rank:
    # item i scores -i, so the target for rank r is item r-1 exactly.
    scores = -np.arange(n, dtype=np.float64)
    cells = []
    all_pass = True
    for r in battery["ranks"]:
        if not 1 <= r <= n:
            raise InputError(f"rank {r} outside the catalog")
        for k in battery["sample_counts"]:
            for alpha in battery["alphas"]:
                rep = bounds.mc_verify(scores, target=r - 1, sample_count=int(k),
                                       alpha=float(alpha), trials=args.trials, seed=args.seed)
                sigma = (rep.bound_ndcg * (1 - rep.bound_ndcg) / args.trials) ** 0.5
                sigma_mrr = (rep.bound_mrr * (1 - rep.bound_mrr) / args.trials) ** 0.5
                ok = (rep.freq_ndcg >= rep.bound_ndcg - 3 * sigma
                      and rep.freq_mrr >= rep.bound_mrr - 3 * sigma_mrr
                      and rep.floor_violations == 0)
                all_pass = all_pass and ok
                cells.append({
                    "r_plus": int(r), "K": int(k), "alpha": float(alpha),
                    "freq_ndcg": rep.freq_ndcg, "bound_ndcg": rep.bound_ndcg,
                    "freq_mrr": rep.freq_mrr, "bound_mrr": rep.bound_mrr,
                    "floor_violations": rep.floor_violations,
                    "pass": ok,
                })
    report = {"trials": args.trials, "seed": args.seed,
              "catalog_size": n, "cells": cells, "all_pass": all_pass}
    with open(os.path.join(out_dir, "verify.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "verify",
                    {"battery": args.battery, "trials": args.trials, "seed": args.seed},
                    ["verify.json"])
    for cell in cells:
        status = "pass" if cell["pass"] else "FAIL"
        print(f"r={cell['r_plus']} K={cell['K']} alpha={cell['alpha']:g}: "
              f"ndcg {cell['freq_ndcg']:.4f}>={cell['bound_ndcg']:.4f} "
              f"mrr {cell['freq_mrr']:.4f}>={cell['bound_mrr']:.4f} [{status}]")
    if not all_pass:
        print("verification FAILED", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    out_dir = _ensure_out(args.out)
    sizes = _int_list(args.catalog_sizes)
    rows = bench.bench_scaling(sizes, dim=args.dim, sample_count=args.negatives,
                               reps=args.reps, seed=args.seed)
    csv_text = bench.bench_csv(rows)
    with open(os.path.join(out_dir, "bench.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    outputs = ["bench.csv"]
    if not args.no_figures:
        figures.bench_plot(rows, os.path.join(out_dir, "bench.png"))
        outputs.append("bench.png")
    _write_manifest(out_dir, "bench",
                    {"catalog_sizes": sizes, "dim": args.dim,
                     "negatives": args.negatives, "reps": args.reps, "seed": args.seed},
                    outputs)
    sys.stdout.write(csv_text)
    return 0


def cmd_sweep(args) -> int:
    out_dir = _ensure_out(args.out)
    cfg = _load_train_config(args)
    log = _load_dataset(args.data)
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise InputError(f"--grid is not valid JSON: {exc}") from None
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise InputError("--grid must be a JSON object of parameter: [values]")
    seeds = _int_list(args.seeds)
    try:
        rows, errors = training.sweep(log, cfg, grid, seeds)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    csv_text = training.sweep_csv(rows, list(grid))
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    outputs = ["sweep.csv"]
    if errors:
        with open(os.path.join(out_dir, "errors.json"), "w", encoding="utf-8") as fh:
            json.dump(errors, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append("errors.json")
    swept_numeric = [k for k in grid if k != "loss"]
    if not args.no_figures and swept_numeric:
        figures.sweep_curve(rows, swept_numeric[0], cfg.eval_metric,
                            os.path.join(out_dir, "sweep.png"))
        outputs.append("sweep.png")
    _write_manifest(out_dir, "sweep",
                    {"base": cfg.to_dict(), "grid": grid, "seeds": seeds}, outputs)
    print(f"{len(rows)} run(s) completed, {len(errors)} failed")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ranklab",
                                     description="ranking-loss laboratory")
    parser.add_argument("--version", action="version", version=f"ranklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="parse, filter and serialize a dataset")
    p.add_argument("--input", help="TSV file of user<TAB>item<TAB>timestamp")
    p.add_argument("--synth", help="synthetic spec, e.g. users=2000,items=500,seed=1")
    p.add_argument("--k-core", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prep)

    p = sub.add_parser("train", help="fit one model")
    p.add_argument("--data", required=True, help="dataset.json from prep")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--loss", help="loss string, e.g. sce:100:100")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="path prefix (without .json/.bin)")
    p.add_argument("--data", required=True)
    p.add_argument("--phase", choices=("val", "test"), default="test")
    p.add_argument("--loss", default="", help="loss label for the CSV row")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bounds", help="closed-form bound grids")
    p.add_argument("--catalog-size", type=int, default=12101)
    p.add_argument("--alpha", default="1,5,100", help="comma-separated alpha values")
    p.add_argument("--metric", choices=("ndcg", "mrr"), default="ndcg")
    p.add_argument("--ranks", help="comma-separated rank rows")
    p.add_argument("--negatives", help="comma-separated K columns")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("verify", help="Monte Carlo bound verification")
    p.add_argument("--battery", default="default", help="'default' or a JSON battery file")
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="full-vs-sampled cost measurement")
    p.add_argument("--catalog-sizes", default="500000,1000000")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="grid of fits over parameters x seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON base training config")
    p.add_argument("--loss", help="base loss string")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--grid", required=True, help='JSON object, e.g. {"loss": ["ce","bce"]}')
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (data.ParseError, data.EmptyDatasetError, data.SplitError, LossConfigError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except IncompatibilityError as exc:
        print(f"incompatible inputs: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # anything unplanned
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
