"""Config-driven experiment runner: ``toolkit <command> --config <path>``.

Commands
    train    build + train a net, write checkpoint and history
    prune    iterative score/remove/fine-tune from a trained checkpoint
    eval     compare an unpruned and a pruned checkpoint (accuracy, FLOPs,
             latency, robustness, CO2) into one report
    latency  matched-neuron layer-vs-filter speedup table from one checkpoint
    oracle   brute-force remove/fine-tune ranking vs similarity scores

Exit codes: 0 success, 1 usage, 2 config error (field name on stderr),
3 runtime error. ``TOOLKIT_THREADS`` caps candidate-scoring parallelism.

Output schemas (all JSON carries ``"schema": 1``):

trace.json    {"schema", "records": [{"iteration", "scores": [{"stage",
              "position", "score", "degenerate"}], "removed", "flops_before",
              "flops_after", "params_before", "params_after", "acc_before",
              "acc_after_removal", "acc_after_finetune"}], "initial_flops",
              "initial_params", "final_flops", "final_params", "truncated",
              "config"}
report.json   {"schema", "toolkit_version", "config", "unpruned": {"accuracy",
              "flops_per_sample", "params"}, "pruned": {...},
              "delta_accuracy_pp", "flop_reduction_pct", "latency",
              "robustness", "co2", "trace"}

Reruns with an identical config and seed reproduce trace/oracle/history JSON
and checkpoints byte-for-byte; wall-clock timing lives in the run_meta.json
sidecar, and measured latency sections vary run to run by nature.
"""

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    SynthDataConfig,
    config_echo,
    load_config,
)
from .evaluation import (
    co2_estimate,
    co2_reduction,
    latency_compare,
    measure_latency,
    robustness_report,
    training_flops,
)
from .network import (
    CheckpointError,
    build,
    count_flops,
    hidden_units,
    load_checkpoint,
    save_checkpoint,
)
from .pruner import (
    default_threads,
    l1_filter_prune,
    oracle_rank,
    prune_iterative,
    prune_one,
    score_candidates,
    scoring_subset,
    spearman,
)
from .training import Dataset, evaluate, load_csv, synth_dataset, train

LOCK_NAME = ".toolkit.lock"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _write_json(path: str, obj) -> None:
    with open(path, "wb") as f:
        f.write(_json_bytes(obj))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _load_data(cfg: ExperimentConfig) -> Dataset:
    if isinstance(cfg.data, SynthDataConfig):
        d = cfg.data
        return synth_dataset(d.n, d.dim, d.classes, d.spread, d.seed)
    d = cfg.data
    return load_csv(d.path, d.label_column, d.test_fraction, d.seed)


def _net_metrics(net, data) -> dict:
    fc = count_flops(net)
    return {
        "accuracy": evaluate(net, data.test_x, data.test_y)
        if len(data.test_x)
        else None,
        "flops_per_sample": fc.per_sample_flops,
        "params": fc.params,
    }


def cmd_train(cfg: ExperimentConfig, out_dir: str) -> list[str]:
    data = _load_data(cfg)
    net, history = train(build(cfg.arch), data, cfg.train)
    ckpt = os.path.join(out_dir, "trained.ckpt")
    save_checkpoint(net, ckpt)
    _write_json(
        os.path.join(out_dir, "history.json"),
        {
            "schema": 1,
            "config": config_echo(cfg),
            "train_loss": history.train_loss,
            "train_accuracy": history.train_accuracy,
            # a dataset without a test split records no test accuracy
            "test_accuracy": [
                a if a == a else None for a in history.test_accuracy
            ],
        },
    )
    _write_csv(
        os.path.join(out_dir, "history.csv"),
        ["epoch", "train_loss", "train_accuracy", "test_accuracy"],
        [
            (i, l, a, t)
            for i, (l, a, t) in enumerate(
                zip(history.train_loss, history.train_accuracy, history.test_accuracy)
            )
        ],
    )
    return ["trained.ckpt", "history.json", "history.csv"]


def cmd_prune(cfg: ExperimentConfig, out_dir: str, checkpoints: list[str]) -> list[str]:
    if len(checkpoints) != 1:
        raise UsageError("prune needs exactly one --checkpoint (the trained net)")
    net = load_checkpoint(checkpoints[0])
    data = _load_data(cfg)
    files = []

    def save_iterate(iterate, record):
        name = f"pruned_{record.iteration + 1:03d}.ckpt"
        save_checkpoint(iterate, os.path.join(out_dir, name))
        files.append(name)

    final, trace = prune_iterative(
        net, data, cfg.prune, threads=default_threads(), on_iteration=save_iterate
    )
    save_checkpoint(final, os.path.join(out_dir, "pruned_final.ckpt"))
    _write_json(os.path.join(out_dir, "trace.json"), {"schema": 1, **trace.to_dict()})
    _write_csv(
        os.path.join(out_dir, "trace.csv"),
        [
            "iteration",
            "removed_stage",
            "removed_position",
            "acc_before",
            "acc_after_removal",
            "acc_after_finetune",
            "flops_before",
            "flops_after",
            "params_before",
            "params_after",
        ],
        [
            (
                r.iteration,
                r.removed.stage,
                r.removed.position,
                r.acc_before,
                r.acc_after_removal,
                r.acc_after_finetune,
                r.flops_before,
                r.flops_after,
                r.params_before,
                r.params_after,
            )
            for r in trace.records
        ],
    )
    return files + ["pruned_final.ckpt", "trace.json", "trace.csv"]


def cmd_eval(
    cfg: ExperimentConfig, out_dir: str, checkpoints: list[str], trace_path: str | None
) -> list[str]:
    if not 1 <= len(checkpoints) <= 2:
        raise UsageError(
            "eval needs --checkpoint <unpruned> [--checkpoint <pruned>]"
        )
    unpruned = load_checkpoint(checkpoints[0])
    pruned = load_checkpoint(checkpoints[-1])
    data = _load_data(cfg)
    m_unpruned = _net_metrics(unpruned, data)
    m_pruned = _net_metrics(pruned, data)

    lat_cfg = cfg.eval.latency
    lat_u = measure_latency(
        unpruned, lat_cfg.n_samples, lat_cfg.runs, lat_cfg.warmup_runs, lat_cfg.seed
    )
    lat_p = measure_latency(
        pruned, lat_cfg.n_samples, lat_cfg.runs, lat_cfg.warmup_runs, lat_cfg.seed
    )
    lat_p.speedup_vs_baseline = lat_u.median_ms / lat_p.median_ms

    robustness = robustness_report(
        unpruned, pruned, data, list(cfg.eval.fgsm_epsilons), cfg.eval.corruption
    )

    n_train = len(data.train_x)
    ft_epochs = cfg.prune.finetune.epochs
    co2_u = co2_estimate(training_flops(unpruned, n_train, ft_epochs), cfg.eval.co2)
    co2_p = co2_estimate(training_flops(pruned, n_train, ft_epochs), cfg.eval.co2)

    trace = None
    if trace_path is not None:
        with open(trace_path, encoding="utf-8") as f:
            trace = json.load(f)

    acc_u, acc_p = m_unpruned["accuracy"], m_pruned["accuracy"]
    report = {
        "schema": 1,
        "toolkit_version": __version__,
        "config": config_echo(cfg),
        "unpruned": m_unpruned,
        "pruned": m_pruned,
        "delta_accuracy_pp": None
        if acc_u is None
        else (acc_p - acc_u) * 100.0,
        "flop_reduction_pct": (
            1.0 - m_pruned["flops_per_sample"] / m_unpruned["flops_per_sample"]
        )
        * 100.0,
        "latency": {
            "unpruned": _latency_dict(lat_u),
            "pruned": _latency_dict(lat_p),
        },
        "robustness": {
            "clean_unpruned": robustness.clean_unpruned,
            "clean_pruned": robustness.clean_pruned,
            "clean_delta_pp": robustness.clean_delta_pp,
            "fgsm": robustness.fgsm,
            "corruptions": robustness.corruptions,
        },
        "co2": {
            "unpruned": vars(co2_u).copy(),
            "pruned": vars(co2_p).copy(),
            "reduction_pct": co2_reduction(co2_u, co2_p) * 100.0,
        },
        "trace": trace,
    }
    _write_json(os.path.join(out_dir, "report.json"), report)
    _write_csv(
        os.path.join(out_dir, "robustness.csv"),
        ["setting", "unpruned", "pruned", "delta_pp"],
        [("clean", robustness.clean_unpruned, robustness.clean_pruned, robustness.clean_delta_pp)]
        + [
            (f"fgsm_eps={row['epsilon']}", row["unpruned"], row["pruned"], row["delta_pp"])
            for row in robustness.fgsm
        ]
        + [
            (
                f"{row['kind']}_sev={row['severity']}",
                row["unpruned"],
                row["pruned"],
                row["delta_pp"],
            )
            for row in robustness.corruptions
        ],
    )
    _write_csv(
        os.path.join(out_dir, "latency_raw.csv"),
        ["net", "run_index", "ms"],
        [("unpruned", i, ms) for i, ms in enumerate(lat_u.raw_ms)]
        + [("pruned", i, ms) for i, ms in enumerate(lat_p.raw_ms)],
    )
    return ["report.json", "robustness.csv", "latency_raw.csv"]


def _latency_dict(stats) -> dict:
    return {
        "mean_ms": stats.mean_ms,
        "median_ms": stats.median_ms,
        "std_ms": stats.std_ms,
        "runs": stats.runs,
        "n_samples": stats.n_samples,
        "speedup_vs_baseline": stats.speedup_vs_baseline,
    }


def cmd_latency(cfg: ExperimentConfig, out_dir: str, checkpoints: list[str]) -> list[str]:
    if len(checkpoints) != 1:
        raise UsageError("latency needs exactly one --checkpoint (the base net)")
    base = load_checkpoint(checkpoints[0])
    data = _load_data(cfg)
    x_score = scoring_subset(data, cfg.prune.score_sample_count, cfg.prune.seed)
    base_units = hidden_units(base)
    lat = cfg.eval.latency

    layer_steps = []
    net = base
    for step in range(1, max(lat.layer_steps) + 1):
        net, _ = prune_one(net, x_score, cfg.prune.kernel, cfg.prune.stage_cap)
        if step in lat.layer_steps:
            layer_steps.append((base_units - hidden_units(net), net))
    filter_steps = []
    for removed, _ in layer_steps:
        f_net = l1_filter_prune(base, removed / base_units)
        filter_steps.append((base_units - hidden_units(f_net), f_net))

    comparison = latency_compare(
        base,
        layer_steps,
        filter_steps,
        n_samples=lat.n_samples,
        runs=lat.runs,
        warmup_runs=lat.warmup_runs,
        neuron_tolerance=lat.neuron_tolerance,
        seed=lat.seed,
    )
    _write_csv(
        os.path.join(out_dir, "latency_table.csv"),
        ["neurons_removed", "neurons_removed_filter", "layer_speedup", "filter_speedup"],
        [
            (p.neurons_removed_layer, p.neurons_removed_filter, p.layer_speedup, p.filter_speedup)
            for p in comparison.points
        ],
    )
    raw_rows = [("base", i, ms) for i, ms in enumerate(comparison.base.raw_ms)]
    for p in comparison.points:
        raw_rows += [
            (f"layer_removed={p.neurons_removed_layer}", i, ms)
            for i, ms in enumerate(p.layer_stats.raw_ms)
        ]
        raw_rows += [
            (f"filter_removed={p.neurons_removed_filter}", i, ms)
            for i, ms in enumerate(p.filter_stats.raw_ms)
        ]
    _write_csv(os.path.join(out_dir, "latency_raw.csv"), ["net", "run_index", "ms"], raw_rows)
    return ["latency_table.csv", "latency_raw.csv"]


def cmd_oracle(cfg: ExperimentConfig, out_dir: str, checkpoints: list[str]) -> list[str]:
    if len(checkpoints) != 1:
        raise UsageError("oracle needs exactly one --checkpoint")
    net = load_checkpoint(checkpoints[0])
    data = _load_data(cfg)
    x_score = scoring_subset(data, cfg.prune.score_sample_count, cfg.prune.seed)
    scored = score_candidates(
        net, x_score, cfg.prune.kernel, cfg.prune.stage_cap, threads=default_threads()
    )
    oracle = oracle_rank(net, data, cfg.prune.finetune, cfg.prune.stage_cap)
    oracle_by_id = dict(oracle)
    rows = [
        (
            b.stage,
            b.position,
            s.cka,
            s.score,
            s.degenerate,
            oracle_by_id[b],
        )
        for b, s in scored
    ]
    _write_csv(
        os.path.join(out_dir, "oracle.csv"),
        ["stage", "position", "cka", "score", "degenerate", "oracle_accuracy"],
        rows,
    )
    rank_corr = spearman(
        [row[2] for row in rows], [row[5] for row in rows]
    )
    _write_json(
        os.path.join(out_dir, "oracle_summary.json"),
        {
            "schema": 1,
            "spearman_cka_vs_oracle_accuracy": rank_corr,
            "candidates": len(rows),
            "config": config_echo(cfg),
        },
    )
    return ["oracle.csv", "oracle_summary.json"]


def main(argv=None) -> int:
    parser = _Parser(prog="toolkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "prune", "eval", "latency", "oracle"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--checkpoint", action="append", default=[])
        p.add_argument("--trace", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            with open(args.config, encoding="utf-8") as f:
                raw = json.load(f)
            raw["seed"] = args.seed
            from .config import parse_config

            cfg = parse_config(raw, os.path.dirname(os.path.abspath(args.config)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, LOCK_NAME)
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(
            f"error: output directory is locked by another run ({lock_path})",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    try:
        if args.command == "train":
            files = cmd_train(cfg, out_dir)
        elif args.command == "prune":
            files = cmd_prune(cfg, out_dir, args.checkpoint)
        elif args.command == "eval":
            files = cmd_eval(cfg, out_dir, args.checkpoint, args.trace)
        elif args.command == "latency":
            files = cmd_latency(cfg, out_dir, args.checkpoint)
        else:
            files = cmd_oracle(cfg, out_dir, args.checkpoint)
        _write_json(
            os.path.join(out_dir, "run_meta.json"),
            {
                "started_utc": started,
                "wall_clock_s": time.perf_counter() - t0,
                "command": args.command,
            },
        )
        files.append("run_meta.json")
        _write_json(os.path.join(out_dir, "manifest.json"), {"schema": 1, "files": sorted(files)})
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        os.close(lock_fd)
        os.unlink(lock_path)
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
