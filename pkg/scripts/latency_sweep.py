#!/usr/bin/env python3
"""Layer-vs-filter latency sweep on a deep narrow net.

Builds one base net, derives matched-neuron layer-pruned and filter-pruned
families, and prints the speedup table (the plot data for the latency
comparison figure).
"""

import argparse
import sys

from ckaprune.evaluation import latency_compare
from ckaprune.network import ArchSpec, build, hidden_units
from ckaprune.pruner import l1_filter_prune, prune_one, scoring_subset
from ckaprune.training import synth_dataset


def run(args):
    spec = ArchSpec(
        input_dim=16,
        stage_widths=(args.width,) * 3,
        blocks_per_stage=(args.blocks,) * 3,
        num_classes=10,
        seed=args.seed,
    )
    base = build(spec)
    data = synth_dataset(2000, 16, 10, 0.25, seed=args.seed)
    x_score = scoring_subset(data, 256, args.seed)
    base_units = hidden_units(base)

    layer_steps, net = [], base
    for _ in range(args.steps):
        net, _ = prune_one(net, x_score)
        layer_steps.append((base_units - hidden_units(net), net))
    filter_steps = []
    for removed, _ in layer_steps:
        pruned = l1_filter_prune(base, removed / base_units)
        filter_steps.append((base_units - hidden_units(pruned), pruned))

    comparison = latency_compare(
        base, layer_steps, filter_steps,
        n_samples=args.n_samples, runs=args.runs, warmup_runs=3,
    )
    print(f"base: {comparison.base.mean_ms:.2f} ms over {args.n_samples} samples")
    print(f"{'neurons removed':>16} {'layer speedup':>14} {'filter speedup':>15}")
    for p in comparison.points:
        print(
            f"{p.neurons_removed_layer:>16d} {p.layer_speedup:>14.3f} "
            f"{p.filter_speedup:>15.3f}"
        )
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--blocks", type=int, default=10)
    parser.add_argument("--steps", type=int, default=8)
    parser.add_argument("--n-samples", type=int, default=1024)
    parser.add_argument("--runs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=3)
    sys.exit(run(parser.parse_args()))
