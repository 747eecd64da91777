"""Experiment configuration: one JSON document, validated field by field.

Every validation error names the offending field path so the CLI can report
it on stderr and exit with the config error code.
"""

import json
import os
from dataclasses import dataclass

from .evaluation import Co2Config, CorruptionConfig
from .network import ArchSpec
from .pruner import PruneConfig
from .rng import derive_seed
from .similarity import Kernel
from .training import TrainConfig


class ConfigError(ValueError):
    """Configuration problem; the message names the field path."""


_REQUIRED = object()


@dataclass(frozen=True)
class SynthDataConfig:
    n: int
    dim: int
    classes: int
    spread: float
    seed: int


@dataclass(frozen=True)
class CsvDataConfig:
    path: str
    label_column: str
    test_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class LatencyConfig:
    n_samples: int = 256
    runs: int = 30
    warmup_runs: int = 3
    layer_steps: tuple[int, ...] = (2, 4, 6)  # cumulative blocks removed per point
    neuron_tolerance: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    latency: LatencyConfig
    fgsm_epsilons: tuple[float, ...]
    corruption: CorruptionConfig
    co2: Co2Config


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    arch: ArchSpec
    data: SynthDataConfig | CsvDataConfig
    train: TrainConfig
    prune: PruneConfig
    eval: EvalConfig


class _Section:
    """Tracks which keys of a JSON object were consumed, for unknown-field
    errors with a full path."""

    def __init__(self, raw: dict, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"field '{path}' must be an object")
        self.raw = raw
        self.path = path
        self.seen: set[str] = set()

    def _full(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind, default=_REQUIRED):
        self.seen.add(key)
        if key not in self.raw:
            if default is not _REQUIRED:
                return default
            raise ConfigError(f"missing required field '{self._full(key)}'")
        value = self.raw[key]
        if value is None and default is not _REQUIRED:
            return default
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool):
            raise ConfigError(
                f"field '{self._full(key)}' has wrong type "
                f"{type(value).__name__}"
            )
        return value

    def sub(self, key: str) -> "_Section":
        self.seen.add(key)
        if key not in self.raw:
            raise ConfigError(f"missing required field '{self._full(key)}'")
        return _Section(self.raw[key], self._full(key))

    def optional_sub(self, key: str) -> "_Section | None":
        self.seen.add(key)
        if key not in self.raw:
            return None
        return _Section(self.raw[key], self._full(key))

    def finish(self) -> None:
        unknown = set(self.raw) - self.seen
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown field '{self._full(name)}'")


def _int_list(section: _Section, key: str, default=None) -> tuple[int, ...]:
    value = section.get(key, list, default=list(default) if default is not None else _REQUIRED)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"field '{section._full(key)}' must be a list of integers")
    return tuple(value)


def _float_list(section: _Section, key: str) -> tuple[float, ...]:
    value = section.get(key, list)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"field '{section._full(key)}' must be a list of numbers")
        out.append(float(v))
    return tuple(out)


def _parse_kernel(section: _Section | None) -> Kernel:
    if section is None:
        return Kernel("linear")
    kind = section.get("kind", str)
    bandwidth = section.get("bandwidth", float, default=None)
    section.finish()
    try:
        return Kernel(kind=kind, bandwidth=bandwidth)
    except ValueError as exc:
        raise ConfigError(f"field '{section.path}': {exc}") from exc


def _parse_train(section: _Section, fallback_seed: int) -> TrainConfig:
    cfg = TrainConfig(
        epochs=section.get("epochs", int),
        batch_size=section.get("batch_size", int, default=64),
        learning_rate=section.get("learning_rate", float),
        momentum=section.get("momentum", float, default=0.9),
        weight_decay=section.get("weight_decay", float, default=0.0),
        seed=section.get("seed", int, default=fallback_seed),
        shuffle=section.get("shuffle", bool, default=True),
    )
    section.finish()
    return cfg


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    root = _Section(raw, "")
    seed = root.get("seed", int, default=0)
    output_dir = root.get("output_dir", str)

    arch_sec = root.sub("arch")
    try:
        arch = ArchSpec(
            input_dim=arch_sec.get("input_dim", int),
            stage_widths=tuple(_int_list(arch_sec, "stage_widths")),
            blocks_per_stage=tuple(_int_list(arch_sec, "blocks_per_stage")),
            num_classes=arch_sec.get("num_classes", int),
            activation=arch_sec.get("activation", str, default="relu"),
            seed=arch_sec.get("seed", int, default=derive_seed(seed, 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'arch': {exc}") from exc
    arch_sec.finish()

    data_sec = root.sub("data")
    kind = data_sec.get("kind", str)
    if kind == "synth":
        data = SynthDataConfig(
            n=data_sec.get("n", int),
            dim=data_sec.get("dim", int),
            classes=data_sec.get("classes", int),
            spread=data_sec.get("spread", float),
            seed=data_sec.get("seed", int, default=derive_seed(seed, 2)),
        )
        if data.dim != arch.input_dim:
            raise ConfigError(
                f"field 'data.dim' ({data.dim}) must match arch.input_dim "
                f"({arch.input_dim})"
            )
    elif kind == "csv":
        path = data_sec.get("path", str)
        resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(resolved):
            raise ConfigError(f"field 'data.path': file not found: {resolved}")
        data = CsvDataConfig(
            path=resolved,
            label_column=data_sec.get("label_column", str),
            test_fraction=data_sec.get("test_fraction", float, default=0.2),
            seed=data_sec.get("seed", int, default=derive_seed(seed, 2)),
        )
    else:
        raise ConfigError("field 'data.kind' must be 'synth' or 'csv'")
    data_sec.finish()

    train = _parse_train(root.sub("train"), derive_seed(seed, 3))

    prune_sec = root.sub("prune")
    try:
        prune = PruneConfig(
            iterations=prune_sec.get("iterations", int),
            finetune=_parse_train(prune_sec.sub("finetune"), derive_seed(seed, 4)),
            score_sample_count=prune_sec.get("score_sample_count", int, default=512),
            kernel=_parse_kernel(prune_sec.optional_sub("kernel")),
            stage_cap=prune_sec.get("stage_cap", str, default="k-2"),
            seed=prune_sec.get("seed", int, default=derive_seed(seed, 5)),
            refresh_reference=prune_sec.get("refresh_reference", bool, default=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"field 'prune': {exc}") from exc
    if prune.stage_cap not in ("k-2", "k-1"):
        raise ConfigError("field 'prune.stage_cap' must be 'k-2' or 'k-1'")
    prune_sec.finish()

    eval_sec = root.sub("eval")
    latency_sec = eval_sec.optional_sub("latency")
    if latency_sec is None:
        latency = LatencyConfig(seed=derive_seed(seed, 6))
    else:
        latency = LatencyConfig(
            n_samples=latency_sec.get("n_samples", int, default=256),
            runs=latency_sec.get("runs", int, default=30),
            warmup_runs=latency_sec.get("warmup_runs", int, default=3),
            layer_steps=_int_list(latency_sec, "layer_steps", default=(2, 4, 6)),
            neuron_tolerance=latency_sec.get("neuron_tolerance", float, default=0.05),
            seed=latency_sec.get("seed", int, default=derive_seed(seed, 6)),
        )
        latency_sec.finish()
    fgsm_epsilons = _float_list(eval_sec, "fgsm_epsilons")
    corr_sec = eval_sec.optional_sub("corruption")
    if corr_sec is None:
        corruption = CorruptionConfig(seed=derive_seed(seed, 7))
    else:
        kinds = corr_sec.get("kinds", list, default=["gaussian", "uniform", "feature_dropout"])
        corruption = CorruptionConfig(
            kinds=tuple(kinds),
            severities=_int_list(corr_sec, "severities", default=(1, 3, 5)),
            seed=corr_sec.get("seed", int, default=derive_seed(seed, 7)),
        )
        corr_sec.finish()
    co2_sec = eval_sec.sub("co2")
    try:
        co2 = Co2Config(
            throughput_flops=co2_sec.get("throughput_flops", float),
            power_w=co2_sec.get("power_w", float),
            intensity_kg_per_kwh=co2_sec.get("intensity_kg_per_kwh", float),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'eval.co2': {exc}") from exc
    co2_sec.finish()
    eval_sec.finish()
    root.finish()

    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        arch=arch,
        data=data,
        train=train,
        prune=prune,
        eval=EvalConfig(
            latency=latency,
            fgsm_epsilons=fgsm_epsilons,
            corruption=corruption,
            co2=co2,
        ),
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def config_echo(cfg: ExperimentConfig) -> dict:
    """JSON-ready echo of the resolved configuration."""
    data: dict = {"kind": "synth"} if isinstance(cfg.data, SynthDataConfig) else {"kind": "csv"}
    if isinstance(cfg.data, SynthDataConfig):
        data.update(
            n=cfg.data.n, dim=cfg.data.dim, classes=cfg.data.classes,
            spread=cfg.data.spread, seed=cfg.data.seed,
        )
    else:
        data.update(
            path=cfg.data.path, label_column=cfg.data.label_column,
            test_fraction=cfg.data.test_fraction, seed=cfg.data.seed,
        )
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "arch": cfg.arch.to_dict(),
        "data": data,
        "train": vars(cfg.train).copy(),
        "prune": {
            "iterations": cfg.prune.iterations,
            "score_sample_count": cfg.prune.score_sample_count,
            "kernel": {"kind": cfg.prune.kernel.kind, "bandwidth": cfg.prune.kernel.bandwidth},
            "stage_cap": cfg.prune.stage_cap,
            "seed": cfg.prune.seed,
            "refresh_reference": cfg.prune.refresh_reference,
            "finetune": vars(cfg.prune.finetune).copy(),
        },
        "eval": {
            "latency": vars(cfg.eval.latency).copy(),
            "fgsm_epsilons": list(cfg.eval.fgsm_epsilons),
            "corruption": {
                "kinds": list(cfg.eval.corruption.kinds),
                "severities": list(cfg.eval.corruption.severities),
                "seed": cfg.eval.corruption.seed,
            },
            "co2": vars(cfg.eval.co2).copy(),
        },
    }
