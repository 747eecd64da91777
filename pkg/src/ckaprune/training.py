"""Supervised training of residual nets by exact backpropagation.

Minibatch SGD with momentum on softmax cross-entropy, deterministic given the
config seed (fixed shuffle order and batch partition). Also provides dataset
generation/loading and top-1 accuracy evaluation.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .network import ResidualNet, _weight_tensors, clone


class CsvError(ValueError):
    """Raised for malformed CSV input; messages carry 1-based line numbers."""


@dataclass
class Dataset:
    """Feature rows plus integer class labels, pre-split into train/test."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    label_names: list[str] | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        if len(self.train_x) != len(self.train_y):
            raise ValueError("train features/labels length mismatch")
        if len(self.test_x) != len(self.test_y):
            raise ValueError("test features/labels length mismatch")
        if len(self.train_x) < 1:
            raise ValueError("dataset needs at least one training sample")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Max-subtracted for stability; the gradient already carries the 1/n factor.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def _forward_cached(net: ResidualNet, x: np.ndarray):
    """Forward pass keeping every intermediate needed by the backward pass."""
    stem_pre = x @ net.stem.w + net.stem.b
    h = np.maximum(stem_pre, 0.0)
    stage_caches = []
    for s, blocks in enumerate(net.stages):
        block_caches = []
        for blk in blocks:
            u = h
            pre1 = u @ blk.w1 + blk.b1
            a1 = np.maximum(pre1, 0.0)
            h = u + a1 @ blk.w2 + blk.b2
            block_caches.append((u, pre1, a1))
        t_in = t_pre = None
        if s < len(net.transitions):
            t = net.transitions[s]
            t_in = h
            t_pre = h @ t.w + t.b
            h = np.maximum(t_pre, 0.0)
        stage_caches.append((block_caches, t_in, t_pre))
    rep_pre = h
    rep = np.maximum(rep_pre, 0.0)
    logits = rep @ net.classifier.w + net.classifier.b
    return logits, (x, stem_pre, stage_caches, rep_pre, rep)


def _backward(net: ResidualNet, caches, dlogits: np.ndarray, want_input_grad=False):
    """Gradients for every parameter, in the same order as _weight_tensors.

    Optionally also returns the gradient w.r.t. the network input.
    """
    x, stem_pre, stage_caches, rep_pre, rep = caches

    g_clf_w = rep.T @ dlogits
    g_clf_b = dlogits.sum(axis=0)
    dh = (dlogits @ net.classifier.w.T) * (rep_pre > 0)

    g_stages = [None] * len(net.stages)
    g_transitions = [None] * len(net.transitions)
    for s in range(len(net.stages) - 1, -1, -1):
        block_caches, t_in, t_pre = stage_caches[s]
        if s < len(net.transitions):
            t = net.transitions[s]
            dt_pre = dh * (t_pre > 0)
            g_transitions[s] = (t_in.T @ dt_pre, dt_pre.sum(axis=0))
            dh = dt_pre @ t.w.T
        block_grads = []
        for blk, (u, pre1, a1) in zip(
            reversed(net.stages[s]), reversed(block_caches)
        ):
            g_w2 = a1.T @ dh
            g_b2 = dh.sum(axis=0)
            dpre1 = (dh @ blk.w2.T) * (pre1 > 0)
            g_w1 = u.T @ dpre1
            g_b1 = dpre1.sum(axis=0)
            dh = dh + dpre1 @ blk.w1.T
            block_grads.append((g_w1, g_b1, g_w2, g_b2))
        g_stages[s] = list(reversed(block_grads))

    dstem_pre = dh * (stem_pre > 0)
    g_stem = (x.T @ dstem_pre, dstem_pre.sum(axis=0))

    grads = [g_stem[0], g_stem[1]]
    for stage_grads in g_stages:
        for g_w1, g_b1, g_w2, g_b2 in stage_grads:
            grads.extend([g_w1, g_b1, g_w2, g_b2])
    for g_w, g_b in g_transitions:
        grads.extend([g_w, g_b])
    grads.extend([g_clf_w, g_clf_b])

    if want_input_grad:
        return grads, dstem_pre @ net.stem.w.T
    return grads


def loss_and_grads(net: ResidualNet, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy loss and parameter gradients for one batch."""
    logits, caches = _forward_cached(net, np.asarray(x, dtype=np.float64))
    loss, dlogits = softmax_cross_entropy(logits, np.asarray(y))
    return loss, _backward(net, caches, dlogits)


def input_gradient(net: ResidualNet, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the input batch."""
    logits, caches = _forward_cached(net, np.asarray(x, dtype=np.float64))
    _, dlogits = softmax_cross_entropy(logits, np.asarray(y))
    _, dx = _backward(net, caches, dlogits, want_input_grad=True)
    return dx


def _check_data(net: ResidualNet, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[1] != net.spec.input_dim:
        raise ValueError(
            f"data dim {x.shape[1]} does not match input_dim {net.spec.input_dim}"
        )
    if len(y) and (y.min() < 0 or y.max() >= net.spec.num_classes):
        raise ValueError("labels out of range for the classifier head")


def train(
    net: ResidualNet, data: Dataset, cfg: TrainConfig
) -> tuple[ResidualNet, TrainHistory]:
    """SGD-with-momentum training; weight decay applies to weight matrices only.

    Returns a new net; the input net is never modified. epochs = 0 returns a
    bit-exact copy.
    """
    _check_data(net, data.train_x, data.train_y)
    net = clone(net)
    history = TrainHistory()
    if cfg.epochs == 0:
        return net, history
    params = _weight_tensors(net)
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    n = len(data.train_x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        weighted_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, caches = _forward_cached(net, data.train_x[idx])
            loss, dlogits = softmax_cross_entropy(logits, data.train_y[idx])
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss ({loss}); learning rate "
                    f"{cfg.learning_rate} is likely diverging"
                )
            grads = _backward(net, caches, dlogits)
            for p, g, v in zip(params, grads, velocity):
                if cfg.weight_decay and p.ndim == 2:
                    g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v += g
                p -= cfg.learning_rate * v
            weighted_loss += loss * len(idx)
        history.train_loss.append(weighted_loss / n)
        history.train_accuracy.append(evaluate(net, data.train_x, data.train_y))
        history.test_accuracy.append(
            evaluate(net, data.test_x, data.test_y)
            if len(data.test_x)
            else float("nan")
        )
    return net, history


def finetune(net: ResidualNet, data: Dataset, cfg: TrainConfig) -> ResidualNet:
    """Same machinery as train; the short recovery pass after a removal."""
    out, _ = train(net, data, cfg)
    return out


def evaluate(net: ResidualNet, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_data(net, x, y)
    from .network import forward

    pred = forward(net, x).argmax(axis=1)
    return float(np.mean(pred == y))


def _stratified_split(
    y: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class test pick of round(test_fraction * class size), capped so
    every class keeps at least one training sample."""
    train_idx, test_idx = [], []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(len(members))]
        n_test = min(int(round(test_fraction * len(members))), len(members) - 1)
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    return np.sort(np.array(train_idx, dtype=int)), np.sort(
        np.array(test_idx, dtype=int)
    )


def synth_dataset(
    n: int, d: int, classes: int, spread: float, seed: int
) -> Dataset:
    """Gaussian-mixture classification data.

    Class means are uniform on the unit sphere, noise is isotropic with scale
    ``spread``, class counts are balanced within one sample, and the 80/20
    train/test split is stratified. Fully deterministic per seed.
    """
    if classes < 2:
        raise ValueError(f"need >= 2 classes, got {classes}")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n} classes={classes}")
    if d < 1 or spread < 0:
        raise ValueError(f"invalid dimensions d={d} or spread={spread}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    x = np.concatenate(
        [
            means[c] + spread * rng.standard_normal((counts[c], d))
            for c in range(classes)
        ]
    )
    y = np.repeat(np.arange(classes), counts)
    train_idx, test_idx = _stratified_split(y, 0.2, rng)
    order = rng.permutation(len(train_idx))
    return Dataset(
        train_x=x[train_idx][order],
        train_y=y[train_idx][order],
        test_x=x[test_idx],
        test_y=y[test_idx],
    )


def load_csv(
    path: str, label_column: str, test_fraction: float = 0.0, seed: int = 0
) -> Dataset:
    """Load a header-first CSV of numeric features plus one label column.

    Labels map to dense 0..C-1 in first-seen order; the mapping is kept on the
    dataset as ``label_names``. test_fraction > 0 applies a seeded stratified
    split, otherwise everything lands in the training split.
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise CsvError(f"{path}: empty file")
    header = rows[0]
    if label_column not in header:
        raise CsvError(f"{path}: line 1: missing label column {label_column!r}")
    label_pos = header.index(label_column)
    feature_names = [h for i, h in enumerate(header) if i != label_pos]

    label_names: list[str] = []
    label_index: dict[str, int] = {}
    features, labels = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvError(
                f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
            )
        feats = []
        for i, cell in enumerate(row):
            if i == label_pos:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise CsvError(
                    f"{path}: line {line_no}: non-numeric value {cell!r} "
                    f"in column {header[i]!r}"
                ) from None
            if not math.isfinite(value):
                raise CsvError(
                    f"{path}: line {line_no}: non-finite value in column {header[i]!r}"
                )
            feats.append(value)
        label = row[label_pos]
        if label not in label_index:
            label_index[label] = len(label_names)
            label_names.append(label)
        features.append(feats)
        labels.append(label_index[label])
    if not features:
        raise CsvError(f"{path}: no data rows")

    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if test_fraction > 0:
        train_idx, test_idx = _stratified_split(
            y, test_fraction, np.random.default_rng(seed)
        )
    else:
        train_idx, test_idx = np.arange(len(y)), np.array([], dtype=int)
    return Dataset(
        train_x=x[train_idx],
        train_y=y[train_idx],
        test_x=x[test_idx],
        test_y=y[test_idx],
        label_names=label_names,
        feature_names=feature_names,
    )
