"""Efficiency and robustness harnesses for pruned-vs-unpruned comparisons.

Latency is wall-clock time of the net's own forward pass over a fixed batch,
averaged across repeated runs after warmup; only relative speedups are
meaningful. Robustness covers the single-step FGSM attack and synthetic
feature corruptions at graded severities. The CO2 estimator converts training
FLOPs into energy and emissions under fixed throughput/power/intensity
assumptions, so relative reductions track FLOP reductions exactly.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .network import ResidualNet, count_flops, forward
from .training import Dataset, evaluate, input_gradient


@dataclass
class LatencyStats:
    mean_ms: float
    median_ms: float
    std_ms: float
    runs: int
    n_samples: int
    raw_ms: list[float] = field(default_factory=list)
    speedup_vs_baseline: float = 1.0


@dataclass
class MatchedPoint:
    """One comparison row: layer- and filter-pruned nets with (near-)equal
    neuron counts removed, and each side's speedup over the base net."""

    neurons_removed_layer: int
    neurons_removed_filter: int
    layer_speedup: float
    filter_speedup: float
    layer_stats: LatencyStats | None = None
    filter_stats: LatencyStats | None = None


@dataclass
class LatencyComparison:
    base: LatencyStats
    points: list[MatchedPoint]


@dataclass(frozen=True)
class CorruptionConfig:
    kinds: tuple[str, ...] = ("gaussian", "uniform", "feature_dropout")
    severities: tuple[int, ...] = (1, 3, 5)
    seed: int = 0


@dataclass
class RobustnessReport:
    """Accuracies for both nets plus deltas in percentage points; positive
    delta means the pruned net improved."""

    clean_unpruned: float
    clean_pruned: float
    clean_delta_pp: float
    fgsm: list[dict]  # epsilon, unpruned, pruned, delta_pp
    corruptions: list[dict]  # kind, severity, unpruned, pruned, delta_pp


@dataclass(frozen=True)
class Co2Config:
    throughput_flops: float  # sustained FLOPs/s of the assumed hardware
    power_w: float
    intensity_kg_per_kwh: float

    def __post_init__(self):
        if self.throughput_flops == 0:
            raise ValueError("throughput must be nonzero")
        if self.throughput_flops < 0 or self.power_w <= 0 or self.intensity_kg_per_kwh <= 0:
            raise ValueError("co2 config values must be positive")


@dataclass(frozen=True)
class Co2Estimate:
    flops_total: float
    throughput_flops: float
    power_w: float
    intensity_kg_per_kwh: float
    energy_kwh: float
    co2_kg: float


def measure_latency(
    net: ResidualNet,
    n_samples: int,
    runs: int,
    warmup_runs: int = 3,
    seed: int = 0,
) -> LatencyStats:
    """Average forward latency over ``runs`` timed passes of one fixed batch.

    Warmup passes are discarded. Runs single-threaded in-process; keep the
    process otherwise idle while measuring.
    """
    if n_samples < 1 or runs < 1:
        raise ValueError("n_samples and runs must be >= 1")
    x = np.random.default_rng(seed).standard_normal((n_samples, net.spec.input_dim))
    raw = []
    with threadpool_limits(limits=1):  # pin BLAS to one thread while timing
        for _ in range(warmup_runs):
            forward(net, x)
        for _ in range(runs):
            t0 = time.perf_counter()
            forward(net, x)
            raw.append((time.perf_counter() - t0) * 1e3)
    return LatencyStats(
        mean_ms=float(np.mean(raw)),
        median_ms=float(np.median(raw)),
        std_ms=float(np.std(raw)),
        runs=runs,
        n_samples=n_samples,
        raw_ms=raw,
    )


def _interleaved_latency(nets, n_samples, runs, warmup_runs, seed) -> list[LatencyStats]:
    """Time several nets round-robin, one run each per cycle, so CPU-frequency
    drift and scheduler noise hit every net about equally."""
    xs = [
        np.random.default_rng(seed).standard_normal((n_samples, net.spec.input_dim))
        for net in nets
    ]
    raws = [[] for _ in nets]
    with threadpool_limits(limits=1):
        for _ in range(warmup_runs):
            for net, x in zip(nets, xs):
                forward(net, x)
        for _ in range(runs):
            for net, x, raw in zip(nets, xs, raws):
                t0 = time.perf_counter()
                forward(net, x)
                raw.append((time.perf_counter() - t0) * 1e3)
    return [
        LatencyStats(
            mean_ms=float(np.mean(raw)),
            median_ms=float(np.median(raw)),
            std_ms=float(np.std(raw)),
            runs=runs,
            n_samples=n_samples,
            raw_ms=raw,
        )
        for raw in raws
    ]


def latency_compare(
    base_net: ResidualNet,
    layer_pruned_steps: list[tuple[int, ResidualNet]],
    filter_pruned_steps: list[tuple[int, ResidualNet]],
    n_samples: int = 512,
    runs: int = 30,
    warmup_runs: int = 3,
    neuron_tolerance: float = 0.05,
    seed: int = 0,
) -> LatencyComparison:
    """Pair layer- and filter-pruned nets with matching removed-neuron counts
    and report each side's speedup over the base net.

    Steps are (neurons_removed, net). Two counts match when they differ by at
    most ``neuron_tolerance`` relative to the larger one (zero matches zero).
    Raises when nothing matches. All nets are timed interleaved (one run each
    per cycle) and speedups use median run latency, keeping ratios stable
    under machine-wide slowdowns.
    """

    def matches(a: int, b: int) -> bool:
        if a == b:
            return True
        return abs(a - b) <= neuron_tolerance * max(a, b)

    remaining = list(filter_pruned_steps)
    matched = []
    for n_layer, layer_net in layer_pruned_steps:
        best = None
        for i, (n_filter, _) in enumerate(remaining):
            if matches(n_layer, n_filter):
                if best is None or abs(n_filter - n_layer) < abs(
                    remaining[best][0] - n_layer
                ):
                    best = i
        if best is None:
            continue
        matched.append(((n_layer, layer_net), remaining.pop(best)))
    if not matched:
        raise ValueError(
            "no layer/filter step pair is within the neuron-count tolerance"
        )

    nets = [base_net]
    for (_, layer_net), (_, filter_net) in matched:
        nets.extend([layer_net, filter_net])
    stats = _interleaved_latency(nets, n_samples, runs, warmup_runs, seed)
    base = stats[0]
    points = []
    for i, ((n_layer, _), (n_filter, _)) in enumerate(matched):
        layer_stats, filter_stats = stats[1 + 2 * i], stats[2 + 2 * i]
        layer_stats.speedup_vs_baseline = base.median_ms / layer_stats.median_ms
        filter_stats.speedup_vs_baseline = base.median_ms / filter_stats.median_ms
        points.append(
            MatchedPoint(
                neurons_removed_layer=n_layer,
                neurons_removed_filter=n_filter,
                layer_speedup=layer_stats.speedup_vs_baseline,
                filter_speedup=filter_stats.speedup_vs_baseline,
                layer_stats=layer_stats,
                filter_stats=filter_stats,
            )
        )
    return LatencyComparison(base=base, points=points)


def fgsm(
    net: ResidualNet, x: np.ndarray, y: np.ndarray, epsilon: float
) -> np.ndarray:
    """Fast gradient sign attack: x + epsilon * sign(d loss / d x)."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    adv = x + epsilon * np.sign(input_gradient(net, x, y))
    # the add can overshoot the epsilon ball by an ulp; snap those entries back
    for _ in range(3):
        over = np.abs(adv - x) > epsilon
        if not over.any():
            break
        adv[over] = np.nextafter(adv[over], x[over])
    return adv


_CORRUPTION_KINDS = ("gaussian", "uniform", "feature_dropout")


def corrupt(
    x: np.ndarray, kind: str, severity: int, seed: int = 0
) -> np.ndarray:
    """Synthetic corruption at severity 1..5.

    gaussian: additive noise, per-feature sigma = 0.05 * severity * feature std.
    uniform: additive noise uniform in +-(0.05 * severity * feature std).
    feature_dropout: each entry zeroed independently with p = 0.1 * severity.
    """
    if kind not in _CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}; use {_CORRUPTION_KINDS}")
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError(f"severity must be 1..5, got {severity}")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        scale = 0.05 * severity * x.std(axis=0)
        return x + rng.standard_normal(x.shape) * scale
    if kind == "uniform":
        scale = 0.05 * severity * x.std(axis=0)
        return x + rng.uniform(-1.0, 1.0, x.shape) * scale
    mask = rng.random(x.shape) >= 0.1 * severity
    return x * mask


def robustness_report(
    unpruned: ResidualNet,
    pruned: ResidualNet,
    data: Dataset,
    epsilons: list[float],
    corruption_cfg: CorruptionConfig = CorruptionConfig(),
) -> RobustnessReport:
    """Clean/FGSM/corruption accuracies for both nets on the test split.

    FGSM is white-box: each net is attacked with its own input gradients.
    Accuracy is reported, never asserted to be monotone in epsilon.
    """
    x, y = data.test_x, data.test_y
    clean_u = evaluate(unpruned, x, y)
    clean_p = evaluate(pruned, x, y)
    fgsm_rows = []
    for eps in epsilons:
        acc_u = evaluate(unpruned, fgsm(unpruned, x, y, eps), y)
        acc_p = evaluate(pruned, fgsm(pruned, x, y, eps), y)
        fgsm_rows.append(
            {
                "epsilon": eps,
                "unpruned": acc_u,
                "pruned": acc_p,
                "delta_pp": (acc_p - acc_u) * 100.0,
            }
        )
    corruption_rows = []
    for kind in corruption_cfg.kinds:
        for severity in corruption_cfg.severities:
            xc = corrupt(x, kind, severity, corruption_cfg.seed)
            acc_u = evaluate(unpruned, xc, y)
            acc_p = evaluate(pruned, xc, y)
            corruption_rows.append(
                {
                    "kind": kind,
                    "severity": severity,
                    "unpruned": acc_u,
                    "pruned": acc_p,
                    "delta_pp": (acc_p - acc_u) * 100.0,
                }
            )
    return RobustnessReport(
        clean_unpruned=clean_u,
        clean_pruned=clean_p,
        clean_delta_pp=(clean_p - clean_u) * 100.0,
        fgsm=fgsm_rows,
        corruptions=corruption_rows,
    )


def training_flops(net: ResidualNet, n_samples: int, epochs: int) -> float:
    """Total FLOPs for a training/fine-tuning run, counting the backward pass
    as twice the forward pass."""
    return 3.0 * count_flops(net).per_sample_flops * n_samples * epochs


def co2_estimate(total_training_flops: float, cfg: Co2Config) -> Co2Estimate:
    """Energy and emissions for a training workload.

    energy_kwh = (flops / throughput) * power / 3.6e6, co2 = energy * intensity;
    linear in flops and in intensity by construction.
    """
    if total_training_flops <= 0:
        raise ValueError("total_training_flops must be positive")
    energy_kwh = (total_training_flops / cfg.throughput_flops) * cfg.power_w / 3.6e6
    return Co2Estimate(
        flops_total=total_training_flops,
        throughput_flops=cfg.throughput_flops,
        power_w=cfg.power_w,
        intensity_kg_per_kwh=cfg.intensity_kg_per_kwh,
        energy_kwh=energy_kwh,
        co2_kg=energy_kwh * cfg.intensity_kg_per_kwh,
    )


def co2_reduction(unpruned: Co2Estimate, pruned: Co2Estimate) -> float:
    """Fractional CO2 reduction of ``pruned`` relative to ``unpruned``."""
    return 1.0 - pruned.co2_kg / unpruned.co2_kg
