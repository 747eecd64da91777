"""Residual MLP classifiers with removable identity-shortcut blocks.

Forward structure:

    h   = relu(x W_stem + b_stem)
    per stage: h = h + relu(h W1 + b1) W2 + b2        (each block)
    between stages: h = relu(h W_t + b_t)
    rep = relu(h)                                      (penultimate activations)
    logits = rep W_c + b_c

Blocks are pure residual (output - input equals the branch value), so
removing a block is exactly equivalent to zeroing its branch. Removal
rebuilds the architecture without the block and transfers every surviving
weight bit-identically; stem, stage transitions and the classifier are never
removable. The first two blocks of each stage (one under the "k-1" cap) are
protected, so a stage of k blocks can lose at most k - 2 of them.

Checkpoint format (little-endian throughout): magic ``CKAP``, u16 version,
u32 length-prefixed UTF-8 JSON header carrying the architecture, removal log,
per-block hidden sizes and the weight-section byte length, then all weight
tensors as float64 in declared order (stem; per stage, per block: W1
row-major, b1, W2, b2; transitions; classifier), then a u32 CRC32 of the
weight section.
"""

import copy
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .rng import Xoshiro256

CHECKPOINT_MAGIC = b"CKAP"
CHECKPOINT_VERSION = 1

STAGE_CAPS = ("k-2", "k-1")


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class BlockId(NamedTuple):
    """Identifies a residual block by stage and build-time position."""

    stage: int
    position: int


@dataclass(frozen=True)
class ArchSpec:
    """Declarative architecture: one width per stage, >= 2 blocks per stage."""

    input_dim: int
    stage_widths: tuple[int, ...]
    blocks_per_stage: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(self.stage_widths))
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if len(self.stage_widths) < 1:
            raise ValueError("need at least one stage")
        if len(self.blocks_per_stage) != len(self.stage_widths):
            raise ValueError(
                f"stage_widths has {len(self.stage_widths)} entries but "
                f"blocks_per_stage has {len(self.blocks_per_stage)}"
            )
        if any(w < 1 for w in self.stage_widths):
            raise ValueError(f"stage widths must be >= 1, got {self.stage_widths}")
        if any(k < 2 for k in self.blocks_per_stage):
            raise ValueError(
                f"every stage needs >= 2 blocks, got {self.blocks_per_stage}"
            )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": list(self.blocks_per_stage),
            "num_classes": self.num_classes,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            input_dim=d["input_dim"],
            stage_widths=tuple(d["stage_widths"]),
            blocks_per_stage=tuple(d["blocks_per_stage"]),
            num_classes=d["num_classes"],
            activation=d.get("activation", "relu"),
            seed=d.get("seed", 0),
        )


@dataclass
class Affine:
    w: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)


@dataclass
class Block:
    """Residual branch f(y) = relu(y w1 + b1) w2 + b2. ``hidden`` may shrink
    below the stage width after filter pruning."""

    w1: np.ndarray  # (width, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, width)
    b2: np.ndarray  # (width,)
    orig_pos: int = 0

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


@dataclass
class ResidualNet:
    spec: ArchSpec
    stem: Affine
    stages: list[list[Block]]
    transitions: list[Affine]
    classifier: Affine
    removal_log: list[BlockId] = field(default_factory=list)


@dataclass(frozen=True)
class FlopCount:
    per_sample_flops: int
    params: int


def _protected_positions(stage_cap: str) -> int:
    if stage_cap not in STAGE_CAPS:
        raise ValueError(f"stage_cap must be one of {STAGE_CAPS}, got {stage_cap!r}")
    return 2 if stage_cap == "k-2" else 1


def _init_affine(rng: Xoshiro256, d_in: int, d_out: int) -> Affine:
    scale = 1.0 / np.sqrt(d_in)
    w = rng.symmetric_uniforms(d_in * d_out, scale).reshape(d_in, d_out)
    return Affine(w=w, b=np.zeros(d_out))


def build(spec: ArchSpec) -> ResidualNet:
    """Instantiate a net with fan-in-scaled uniform weights and zero biases,
    drawn from the seeded deterministic stream in checkpoint order."""
    rng = Xoshiro256(spec.seed)
    stem = _init_affine(rng, spec.input_dim, spec.stage_widths[0])
    stages = []
    for s, width in enumerate(spec.stage_widths):
        blocks = []
        for pos in range(spec.blocks_per_stage[s]):
            first = _init_affine(rng, width, width)
            second = _init_affine(rng, width, width)
            blocks.append(
                Block(w1=first.w, b1=first.b, w2=second.w, b2=second.b, orig_pos=pos)
            )
        stages.append(blocks)
    transitions = [
        _init_affine(rng, spec.stage_widths[s], spec.stage_widths[s + 1])
        for s in range(len(spec.stage_widths) - 1)
    ]
    classifier = _init_affine(rng, spec.stage_widths[-1], spec.num_classes)
    return ResidualNet(
        spec=spec,
        stem=stem,
        stages=stages,
        transitions=transitions,
        classifier=classifier,
    )


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _check_input(net: ResidualNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match input_dim {net.spec.input_dim}"
        )
    return x


def representation(net: ResidualNet, x: np.ndarray) -> np.ndarray:
    """Penultimate activations: post-activation output of the final stage.

    Labels never enter; the classifier weights do not affect this output.
    """
    x = _check_input(net, x)
    h = _relu(x @ net.stem.w + net.stem.b)
    for s, blocks in enumerate(net.stages):
        for blk in blocks:
            h = h + _relu(h @ blk.w1 + blk.b1) @ blk.w2 + blk.b2
        if s < len(net.transitions):
            t = net.transitions[s]
            h = _relu(h @ t.w + t.b)
    return _relu(h)


def forward(net: ResidualNet, x: np.ndarray) -> np.ndarray:
    """Logits, shape (n, num_classes)."""
    rep = representation(net, x)
    return rep @ net.classifier.w + net.classifier.b


def candidate_blocks(net: ResidualNet, stage_cap: str = "k-2") -> list[BlockId]:
    """Blocks eligible for removal, stage-major then position order.

    The first ``c`` build-time positions of each stage are protected
    (c = 2 under "k-2", 1 under "k-1"), so a stage built with k blocks can
    contribute at most k - c removals in total.
    """
    protected = _protected_positions(stage_cap)
    return [
        BlockId(s, blk.orig_pos)
        for s, blocks in enumerate(net.stages)
        for blk in blocks
        if blk.orig_pos >= protected
    ]


def remove_block(
    net: ResidualNet, block_id: BlockId, stage_cap: str = "k-2"
) -> ResidualNet:
    """Rebuild the net without one block, transferring all surviving weights
    bit-identically. No fine-tuning happens here; the source net is untouched."""
    block_id = BlockId(*block_id)
    if not 0 <= block_id.stage < len(net.stages):
        raise ValueError(f"stage {block_id.stage} out of range")
    protected = _protected_positions(stage_cap)
    if block_id.position < protected:
        raise ValueError(
            f"block {tuple(block_id)} is protected: the first {protected} "
            f"positions of a stage are not removable"
        )
    present = {blk.orig_pos for blk in net.stages[block_id.stage]}
    if block_id.position not in present:
        raise ValueError(f"block {tuple(block_id)} is not present in the net")

    def copy_affine(a: Affine) -> Affine:
        return Affine(w=a.w.copy(), b=a.b.copy())

    def copy_block(blk: Block) -> Block:
        return Block(
            w1=blk.w1.copy(),
            b1=blk.b1.copy(),
            w2=blk.w2.copy(),
            b2=blk.b2.copy(),
            orig_pos=blk.orig_pos,
        )

    stages = [
        [
            copy_block(blk)
            for blk in blocks
            if not (s == block_id.stage and blk.orig_pos == block_id.position)
        ]
        for s, blocks in enumerate(net.stages)
    ]
    return ResidualNet(
        spec=net.spec,
        stem=copy_affine(net.stem),
        stages=stages,
        transitions=[copy_affine(t) for t in net.transitions],
        classifier=copy_affine(net.classifier),
        removal_log=list(net.removal_log) + [block_id],
    )


def _affine_flops(d_in: int, d_out: int) -> int:
    return 2 * d_in * d_out + d_out


def count_flops(net: ResidualNet) -> FlopCount:
    """Per-sample FLOPs and parameter count.

    Convention: an affine d_in -> d_out costs 2*d_in*d_out + d_out, ReLU and
    the residual add cost their width. Only reductions between two counts are
    ever compared, so any fixed convention works; this one is exact integer
    arithmetic.
    """
    spec = net.spec
    flops = _affine_flops(spec.input_dim, spec.stage_widths[0])
    flops += spec.stage_widths[0]  # stem relu
    params = spec.input_dim * spec.stage_widths[0] + spec.stage_widths[0]
    for s, blocks in enumerate(net.stages):
        width = spec.stage_widths[s]
        for blk in blocks:
            h = blk.hidden
            flops += _affine_flops(width, h) + h  # branch entry + relu
            flops += _affine_flops(h, width) + width  # branch exit + residual add
            params += width * h + h + h * width + width
    for t in net.transitions:
        d_in, d_out = t.w.shape
        flops += _affine_flops(d_in, d_out) + d_out  # transition + relu
        params += d_in * d_out + d_out
    flops += spec.stage_widths[-1]  # representation relu
    flops += _affine_flops(spec.stage_widths[-1], spec.num_classes)
    params += spec.stage_widths[-1] * spec.num_classes + spec.num_classes
    return FlopCount(per_sample_flops=flops, params=params)


def hidden_units(net: ResidualNet) -> int:
    """Total hidden units across all residual branches (the prunable neurons)."""
    return sum(blk.hidden for blocks in net.stages for blk in blocks)


def clone(net: ResidualNet) -> ResidualNet:
    return copy.deepcopy(net)


def _weight_tensors(net: ResidualNet) -> list[np.ndarray]:
    tensors = [net.stem.w, net.stem.b]
    for blocks in net.stages:
        for blk in blocks:
            tensors.extend([blk.w1, blk.b1, blk.w2, blk.b2])
    for t in net.transitions:
        tensors.extend([t.w, t.b])
    tensors.extend([net.classifier.w, net.classifier.b])
    return tensors


def save_checkpoint(net: ResidualNet, path: str) -> None:
    weight_bytes = b"".join(
        np.ascontiguousarray(t, dtype="<f8").tobytes() for t in _weight_tensors(net)
    )
    header = {
        "arch": net.spec.to_dict(),
        "removal_log": [[int(s), int(p)] for s, p in net.removal_log],
        "hidden_sizes": [[blk.hidden for blk in blocks] for blocks in net.stages],
        "weight_bytes": len(weight_bytes),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(weight_bytes)
        f.write(struct.pack("<I", zlib.crc32(weight_bytes)))


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path: str) -> ResidualNet:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"not a checkpoint: bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionError(
                f"unsupported checkpoint version {version}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
            declared = int(header["weight_bytes"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TruncatedError(f"unreadable checkpoint header: {exc}") from exc
        weight_bytes = _read_exact(f, declared, "weight section")
        (crc,) = struct.unpack("<I", _read_exact(f, 4, "checksum"))
    if crc != zlib.crc32(weight_bytes):
        raise ChecksumError("weight-section CRC32 mismatch")

    try:
        spec = ArchSpec.from_dict(header["arch"])
        removal_log = [BlockId(s, p) for s, p in header["removal_log"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise TruncatedError(f"malformed checkpoint header: {exc}") from exc
    removed_per_stage = [set() for _ in spec.stage_widths]
    for bid in removal_log:
        removed_per_stage[bid.stage].add(bid.position)

    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        if offset + count * 8 > len(weight_bytes):
            raise TruncatedError(
                "weight section shorter than the architecture requires"
            )
        arr = np.frombuffer(
            weight_bytes, dtype="<f8", count=count, offset=offset
        ).reshape(shape)
        offset += count * 8
        return arr.astype(np.float64)

    stem = Affine(w=take((spec.input_dim, spec.stage_widths[0])), b=take((spec.stage_widths[0],)))
    stages = []
    for s, width in enumerate(spec.stage_widths):
        present = [
            pos
            for pos in range(spec.blocks_per_stage[s])
            if pos not in removed_per_stage[s]
        ]
        hidden_sizes = header["hidden_sizes"][s]
        if len(hidden_sizes) != len(present):
            raise TruncatedError(
                f"stage {s}: header lists {len(hidden_sizes)} hidden sizes "
                f"for {len(present)} surviving blocks"
            )
        blocks = []
        for pos, hidden in zip(present, hidden_sizes):
            blocks.append(
                Block(
                    w1=take((width, hidden)),
                    b1=take((hidden,)),
                    w2=take((hidden, width)),
                    b2=take((width,)),
                    orig_pos=pos,
                )
            )
        stages.append(blocks)
    transitions = [
        Affine(
            w=take((spec.stage_widths[s], spec.stage_widths[s + 1])),
            b=take((spec.stage_widths[s + 1],)),
        )
        for s in range(len(spec.stage_widths) - 1)
    ]
    classifier = Affine(
        w=take((spec.stage_widths[-1], spec.num_classes)), b=take((spec.num_classes,))
    )
    if offset != len(weight_bytes):
        raise TruncatedError(
            f"weight section holds {len(weight_bytes)} bytes but the "
            f"architecture needs {offset}"
        )
    return ResidualNet(
        spec=spec,
        stem=stem,
        stages=stages,
        transitions=transitions,
        classifier=classifier,
        removal_log=removal_log,
    )
