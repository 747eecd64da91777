"""Iterative layer pruning driven by representation similarity.

Each iteration scores every candidate block by temporarily removing it (no
fine-tuning) and comparing the pruned net's penultimate representation with
the current net's on a fixed scoring batch; the lowest-scoring block is
removed for real, the net is fine-tuned, and the loop repeats. One iteration
costs exactly one removal and one extra representation extraction per
candidate, so it scales linearly in the number of candidates.

Also provides the l1-norm filter-pruning combination, a random-layer control
baseline, and the brute-force remove/fine-tune/evaluate oracle ranking.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import (
    STAGE_CAPS,
    Affine,
    Block,
    BlockId,
    FlopCount,
    ResidualNet,
    candidate_blocks,
    count_flops,
    remove_block,
    representation,
)
from .rng import Xoshiro256
from .similarity import LINEAR, Kernel, SimilarityScore, layer_score
from .training import Dataset, TrainConfig, evaluate, finetune


@dataclass(frozen=True)
class PruneConfig:
    iterations: int
    finetune: TrainConfig
    score_sample_count: int = 512
    kernel: Kernel = LINEAR
    stage_cap: str = "k-2"
    seed: int = 0
    refresh_reference: bool = True  # re-extract the reference after each fine-tune

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.score_sample_count < 2:
            raise ValueError(
                f"score_sample_count must be >= 2, got {self.score_sample_count}"
            )
        if self.stage_cap not in STAGE_CAPS:
            raise ValueError(f"stage_cap must be one of {STAGE_CAPS}, got {self.stage_cap!r}")


@dataclass
class PruneRecord:
    iteration: int
    scores: list[tuple[BlockId, float, bool]]  # (block, score, degenerate)
    removed: BlockId
    flops_before: int
    flops_after: int
    params_before: int
    params_after: int
    acc_before: float | None = None
    acc_after_removal: float | None = None
    acc_after_finetune: float | None = None


@dataclass
class PruneTrace:
    records: list[PruneRecord]
    initial_flops: FlopCount
    final_flops: FlopCount
    config: PruneConfig
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "records": [
                {
                    "iteration": r.iteration,
                    "scores": [
                        {
                            "stage": b.stage,
                            "position": b.position,
                            "score": s,
                            "degenerate": d,
                        }
                        for b, s, d in r.scores
                    ],
                    "removed": {"stage": r.removed.stage, "position": r.removed.position},
                    "flops_before": r.flops_before,
                    "flops_after": r.flops_after,
                    "params_before": r.params_before,
                    "params_after": r.params_after,
                    "acc_before": r.acc_before,
                    "acc_after_removal": r.acc_after_removal,
                    "acc_after_finetune": r.acc_after_finetune,
                }
                for r in self.records
            ],
            "initial_flops": self.initial_flops.per_sample_flops,
            "initial_params": self.initial_flops.params,
            "final_flops": self.final_flops.per_sample_flops,
            "final_params": self.final_flops.params,
            "truncated": self.truncated,
            "config": {
                "iterations": self.config.iterations,
                "score_sample_count": self.config.score_sample_count,
                "kernel": {
                    "kind": self.config.kernel.kind,
                    "bandwidth": self.config.kernel.bandwidth,
                },
                "stage_cap": self.config.stage_cap,
                "seed": self.config.seed,
                "refresh_reference": self.config.refresh_reference,
                "finetune": {
                    "epochs": self.config.finetune.epochs,
                    "batch_size": self.config.finetune.batch_size,
                    "learning_rate": self.config.finetune.learning_rate,
                    "momentum": self.config.finetune.momentum,
                    "weight_decay": self.config.finetune.weight_decay,
                    "seed": self.config.finetune.seed,
                    "shuffle": self.config.finetune.shuffle,
                },
            },
        }


@dataclass
class ScoreStats:
    """Bookkeeping counters proving the per-iteration cost is linear."""

    removals: int = 0
    extractions: int = 0


def default_threads() -> int:
    """Scoring parallelism, capped by the TOOLKIT_THREADS environment variable."""
    raw = os.environ.get("TOOLKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def score_candidates(
    net: ResidualNet,
    x_score: np.ndarray,
    kernel: Kernel = LINEAR,
    stage_cap: str = "k-2",
    reference: np.ndarray | None = None,
    stats: ScoreStats | None = None,
    threads: int = 1,
) -> list[tuple[BlockId, SimilarityScore]]:
    """Score every candidate block on the same scoring batch.

    Each candidate is scored against ``reference`` (the unpruned
    representation, extracted here when not supplied) via one temporary
    removal and one representation extraction. The input net is never
    modified and never fine-tuned. Results are in candidate order and
    independent of evaluation order, so scoring may run on ``threads`` > 1
    worker threads with bit-identical output.
    """
    ids = candidate_blocks(net, stage_cap)
    if not ids:
        raise ValueError("nothing prunable: candidate set is empty")
    x_score = np.asarray(x_score, dtype=np.float64)
    if x_score.shape[0] < 2:
        raise ValueError("scoring batch needs at least 2 samples")
    if reference is None:
        reference = representation(net, x_score)
        if stats is not None:
            stats.extractions += 1

    def score_one(block_id: BlockId) -> SimilarityScore:
        pruned = remove_block(net, block_id, stage_cap)
        return layer_score(reference, representation(pruned, x_score), kernel)

    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score_one, ids))
    else:
        scores = [score_one(b) for b in ids]
    if stats is not None:
        stats.removals += len(ids)
        stats.extractions += len(ids)
    return list(zip(ids, scores))


def _selection_key(item: tuple[BlockId, SimilarityScore]):
    block, s = item
    # Degenerate (collapsed-representation) candidates rank after everything.
    return (s.degenerate, s.score, block.stage, block.position)


def prune_one(
    net: ResidualNet,
    x_score: np.ndarray,
    kernel: Kernel = LINEAR,
    stage_cap: str = "k-2",
    reference: np.ndarray | None = None,
    stats: ScoreStats | None = None,
    threads: int = 1,
) -> tuple[ResidualNet, PruneRecord]:
    """Remove the lowest-scoring candidate; ties break on lowest (stage, position)."""
    scored = score_candidates(
        net, x_score, kernel, stage_cap, reference=reference, stats=stats, threads=threads
    )
    removed, _ = min(scored, key=_selection_key)
    before = count_flops(net)
    pruned = remove_block(net, removed, stage_cap)
    after = count_flops(pruned)
    record = PruneRecord(
        iteration=0,
        scores=[(b, s.score, s.degenerate) for b, s in scored],
        removed=removed,
        flops_before=before.per_sample_flops,
        flops_after=after.per_sample_flops,
        params_before=before.params,
        params_after=after.params,
    )
    return pruned, record


def scoring_subset(data: Dataset, count: int, seed: int) -> np.ndarray:
    """Fixed seeded stratified subsample of the training split used for all
    representation extractions of a pruning run."""
    n = len(data.train_x)
    if n <= count:
        return data.train_x.copy()
    rng = np.random.default_rng(seed)
    picked = []
    classes = np.unique(data.train_y)
    per_class = count // len(classes)
    for c in classes:
        members = np.flatnonzero(data.train_y == c)
        take = min(per_class, len(members))
        picked.extend(members[rng.permutation(len(members))[:take]])
    # Top up to the requested count from the leftovers, still seeded.
    if len(picked) < count:
        rest = np.setdiff1d(np.arange(n), np.array(picked))
        extra = rng.permutation(len(rest))[: count - len(picked)]
        picked.extend(rest[extra])
    return data.train_x[np.sort(np.array(picked, dtype=int))]


def prune_iterative(
    net: ResidualNet,
    data: Dataset,
    cfg: PruneConfig,
    threads: int = 1,
    on_iteration=None,
) -> tuple[ResidualNet, PruneTrace]:
    """Score / remove argmin / fine-tune, for cfg.iterations rounds.

    The scoring batch is drawn once (seeded, stratified) and reused across
    iterations. By default the reference representation is re-extracted from
    the current fine-tuned net each round; refresh_reference=False freezes
    the original unpruned reference instead. Stops early (trace flagged
    truncated) when candidates run out. ``on_iteration(net, record)`` is
    called after each fine-tune, e.g. to checkpoint the iterate.
    """
    x_score = scoring_subset(data, cfg.score_sample_count, cfg.seed)
    initial = count_flops(net)
    frozen_reference = (
        None if cfg.refresh_reference else representation(net, x_score)
    )
    has_test = len(data.test_x) > 0
    records: list[PruneRecord] = []
    truncated = False
    for i in range(cfg.iterations):
        if not candidate_blocks(net, cfg.stage_cap):
            truncated = True
            break
        acc_before = evaluate(net, data.test_x, data.test_y) if has_test else None
        pruned, record = prune_one(
            net,
            x_score,
            cfg.kernel,
            cfg.stage_cap,
            reference=frozen_reference,
            threads=threads,
        )
        record.iteration = i
        record.acc_before = acc_before
        if has_test:
            record.acc_after_removal = evaluate(pruned, data.test_x, data.test_y)
        net = finetune(pruned, data, cfg.finetune)
        if has_test:
            record.acc_after_finetune = evaluate(net, data.test_x, data.test_y)
        records.append(record)
        if on_iteration is not None:
            on_iteration(net, record)
    return net, PruneTrace(
        records=records,
        initial_flops=initial,
        final_flops=count_flops(net),
        config=cfg,
        truncated=truncated,
    )


def l1_filter_prune(net: ResidualNet, fraction: float) -> ResidualNet:
    """Remove the globally lowest-|w|_1 fraction of hidden units.

    A unit's importance is the l1 norm of its incoming weights (one column of
    the block's first matrix). Removing unit j deletes that column, its bias
    entry, and the matching row of the second matrix. Errors out rather than
    emptying any block.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    units = []
    for s, blocks in enumerate(net.stages):
        for blk in blocks:
            norms = np.abs(blk.w1).sum(axis=0)
            for u in range(blk.hidden):
                units.append((float(norms[u]), s, blk.orig_pos, u))
    units.sort()
    n_remove = int(fraction * len(units))
    doomed: dict[tuple[int, int], list[int]] = {}
    for _, s, pos, u in units[:n_remove]:
        doomed.setdefault((s, pos), []).append(u)

    new_stages = []
    for s, blocks in enumerate(net.stages):
        new_blocks = []
        for blk in blocks:
            drop = doomed.get((s, blk.orig_pos), [])
            if len(drop) >= blk.hidden:
                raise ValueError(
                    f"fraction {fraction} would remove all {blk.hidden} units "
                    f"of block (stage {s}, position {blk.orig_pos})"
                )
            keep = np.setdiff1d(np.arange(blk.hidden), np.array(drop, dtype=int))
            new_blocks.append(
                Block(
                    w1=blk.w1[:, keep].copy(),
                    b1=blk.b1[keep].copy(),
                    w2=blk.w2[keep, :].copy(),
                    b2=blk.b2.copy(),
                    orig_pos=blk.orig_pos,
                )
            )
        new_stages.append(new_blocks)
    return ResidualNet(
        spec=net.spec,
        stem=Affine(w=net.stem.w.copy(), b=net.stem.b.copy()),
        stages=new_stages,
        transitions=[Affine(w=t.w.copy(), b=t.b.copy()) for t in net.transitions],
        classifier=Affine(w=net.classifier.w.copy(), b=net.classifier.b.copy()),
        removal_log=list(net.removal_log),
    )


def random_layer_prune(
    net: ResidualNet, seed: int, stage_cap: str = "k-2"
) -> tuple[ResidualNet, BlockId]:
    """Control baseline: remove one uniformly chosen candidate block."""
    ids = candidate_blocks(net, stage_cap)
    if not ids:
        raise ValueError("nothing prunable: candidate set is empty")
    chosen = ids[Xoshiro256(seed).randbelow(len(ids))]
    return remove_block(net, chosen, stage_cap), chosen


def oracle_rank(
    net: ResidualNet,
    data: Dataset,
    finetune_cfg: TrainConfig,
    stage_cap: str = "k-2",
) -> list[tuple[BlockId, float]]:
    """Brute-force ground truth: remove each candidate, fine-tune briefly,
    evaluate on the test split. Costs one fine-tune per candidate, so keep
    the net small."""
    results = []
    for block_id in candidate_blocks(net, stage_cap):
        trial = finetune(remove_block(net, block_id, stage_cap), data, finetune_cfg)
        results.append((block_id, evaluate(trial, data.test_x, data.test_y)))
    return results


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties; 0 when either
    side is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman needs two equal-length vectors")
    ra, rb = _ranks(a), _ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))
