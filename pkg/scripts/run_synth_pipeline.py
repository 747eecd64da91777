#!/usr/bin/env python3
"""End-to-end experiment on the synthetic mixture: train, prune, evaluate.

Drives the CLI so the run is identical to what `toolkit` produces, then
prints the headline numbers from the report.
"""

import argparse
import json
import os
import sys

from ckaprune.cli import main as toolkit


def run(args):
    out = args.out
    steps = [
        ["train", "--config", args.config, "--out", f"{out}/train"],
        [
            "prune", "--config", args.config, "--out", f"{out}/prune",
            "--checkpoint", f"{out}/train/trained.ckpt",
        ],
        [
            "eval", "--config", args.config, "--out", f"{out}/eval",
            "--checkpoint", f"{out}/train/trained.ckpt",
            "--checkpoint", f"{out}/prune/pruned_final.ckpt",
            "--trace", f"{out}/prune/trace.json",
        ],
    ]
    for step in steps:
        print(f"$ toolkit {' '.join(step)}")
        code = toolkit(step)
        if code != 0:
            return code

    report = json.load(open(f"{out}/eval/report.json"))
    print()
    print(f"unpruned accuracy   {report['unpruned']['accuracy']:.4f}")
    print(f"pruned accuracy     {report['pruned']['accuracy']:.4f}")
    print(f"delta accuracy      {report['delta_accuracy_pp']:+.2f} pp")
    print(f"FLOP reduction      {report['flop_reduction_pct']:.2f} %")
    print(f"latency speedup     {report['latency']['pruned']['speedup_vs_baseline']:.2f}x")
    print(f"CO2 reduction       {report['co2']['reduction_pct']:.2f} %")
    for row in report["robustness"]["fgsm"]:
        print(f"FGSM eps={row['epsilon']:<5} delta {row['delta_pp']:+.2f} pp")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config",
        default=os.path.join(os.path.dirname(__file__), "..", "configs", "synth_experiment.json"),
    )
    parser.add_argument("--out", default="out/synth_pipeline")
    sys.exit(run(parser.parse_args()))
