"""Layer pruning for residual networks driven by representation similarity.

Blocks whose removal leaves the penultimate representation most similar to
the original (highest CKA, lowest 1 - CKA score) are pruned first, with
fine-tuning between removals. Includes FLOP/parameter accounting, a
layer-vs-filter latency harness, FGSM/corruption robustness deltas, and a
CO2 estimator.
"""

__version__ = "0.1.0"

from .network import (
    ArchSpec,
    BlockId,
    FlopCount,
    ResidualNet,
    build,
    candidate_blocks,
    count_flops,
    forward,
    hidden_units,
    load_checkpoint,
    remove_block,
    representation,
    save_checkpoint,
)
from .pruner import (
    PruneConfig,
    PruneRecord,
    PruneTrace,
    l1_filter_prune,
    oracle_rank,
    prune_iterative,
    prune_one,
    random_layer_prune,
    score_candidates,
)
from .similarity import LINEAR, Kernel, SimilarityScore, cka, cka_linear_feature, hsic_biased, layer_score
from .training import Dataset, TrainConfig, evaluate, finetune, load_csv, synth_dataset, train

__all__ = [
    "ArchSpec",
    "BlockId",
    "Dataset",
    "FlopCount",
    "Kernel",
    "LINEAR",
    "PruneConfig",
    "PruneRecord",
    "PruneTrace",
    "ResidualNet",
    "SimilarityScore",
    "TrainConfig",
    "build",
    "candidate_blocks",
    "cka",
    "cka_linear_feature",
    "count_flops",
    "evaluate",
    "finetune",
    "forward",
    "hidden_units",
    "hsic_biased",
    "l1_filter_prune",
    "layer_score",
    "load_checkpoint",
    "load_csv",
    "oracle_rank",
    "prune_iterative",
    "prune_one",
    "random_layer_prune",
    "remove_block",
    "representation",
    "save_checkpoint",
    "score_candidates",
    "synth_dataset",
    "train",
]
