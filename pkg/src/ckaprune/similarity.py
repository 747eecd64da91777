"""HSIC, CKA and the block-importance score derived from them.

CKA(x, y) = HSIC(K_x, K_y) / sqrt(HSIC(K_x, K_x) * HSIC(K_y, K_y)), built on
the biased HSIC estimator tr(K H L H) / (n - 1)^2. A block's score is
1 - CKA between the reference representation and the representation of the
network with that block removed, so the most redundant block scores lowest.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, center_gram, frob_inner, gram_linear

# Self-HSIC below this is a collapsed (constant) representation.
DEGENERATE_EPS = 1e-12

# CKA may exceed 1 by rounding only; anything larger is a bug.
_OVERSHOOT_TOL = 1e-9


@dataclass(frozen=True)
class Kernel:
    """Kernel used inside HSIC: "linear", or "rbf" with an explicit
    bandwidth (None selects the median pairwise-distance heuristic)."""

    kind: str = "linear"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "linear" and self.bandwidth is not None:
            raise ValueError("bandwidth is only meaningful for the rbf kernel")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"rbf bandwidth must be positive, got {self.bandwidth}")


LINEAR = Kernel("linear")


@dataclass(frozen=True)
class SimilarityScore:
    """CKA value in [0, 1], the pruning score 1 - cka, and a flag marking
    a degenerate (constant-representation) comparison."""

    cka: float
    score: float
    degenerate: bool = False


def gram_rbf(x: np.ndarray, bandwidth: float | None = None) -> np.ndarray:
    """RBF-kernel Gram matrix; bandwidth defaults to the median heuristic."""
    x = as_matrix(x, "x")
    if x.shape[0] < 2:
        raise ValueError(f"gram matrix needs >= 2 samples, got {x.shape[0]}")
    sq_norms = np.sum(x * x, axis=1)
    sq_dists = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (x @ x.T)
    np.clip(sq_dists, 0.0, None, out=sq_dists)
    if bandwidth is None:
        n = x.shape[0]
        iu = np.triu_indices(n, k=1)
        bandwidth = float(np.median(np.sqrt(sq_dists[iu])))
        if bandwidth <= 0.0:
            bandwidth = 1.0  # constant input; any bandwidth gives the all-ones gram
    return np.exp(-sq_dists / (2.0 * bandwidth**2))


def _gram(x: np.ndarray, kernel: Kernel) -> np.ndarray:
    if kernel.kind == "linear":
        return gram_linear(x)
    return gram_rbf(x, kernel.bandwidth)


def hsic_biased(k: np.ndarray, l: np.ndarray) -> float:
    """Biased HSIC estimator tr(K H L H) / (n - 1)^2 on raw Gram matrices."""
    k = np.asarray(k, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"K must be square, got shape {k.shape}")
    if l.shape != k.shape:
        raise ValueError(f"gram size mismatch: {k.shape} vs {l.shape}")
    n = k.shape[0]
    if n < 2:
        raise ValueError("HSIC is undefined for fewer than 2 samples")
    return frob_inner(center_gram(k), center_gram(l)) / (n - 1) ** 2


def _score_from_hsic(hxy: float, hxx: float, hyy: float) -> SimilarityScore:
    if hxx < DEGENERATE_EPS or hyy < DEGENERATE_EPS:
        return SimilarityScore(cka=0.0, score=1.0, degenerate=True)
    value = hxy / math.sqrt(hxx * hyy)
    if value > 1.0 + _OVERSHOOT_TOL:
        raise ArithmeticError(f"CKA overshoot beyond rounding tolerance: {value!r}")
    value = min(max(value, 0.0), 1.0)
    return SimilarityScore(cka=value, score=1.0 - value, degenerate=False)


def cka(x: np.ndarray, y: np.ndarray, kernel: Kernel = LINEAR) -> SimilarityScore:
    """CKA between two representations (rows = the same samples).

    Feature dimensions may differ. A constant representation on either side
    is flagged degenerate and scored as cka = 0 rather than maximally similar.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"sample-count mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("CKA needs at least 2 samples")
    kx = _gram(x, kernel)
    ky = _gram(y, kernel)
    hxy = hsic_biased(kx, ky)
    hxx = hsic_biased(kx, kx)
    hyy = hsic_biased(ky, ky)
    return _score_from_hsic(hxy, hxx, hyy)


def cka_linear_feature(x: np.ndarray, y: np.ndarray) -> SimilarityScore:
    """Linear CKA in feature space: ||y_c^T x_c||_F^2 / (||x_c^T x_c||_F ||y_c^T y_c||_F)
    on column-centered inputs. Same value as cka(x, y, LINEAR) at
    O(n d_x d_y) cost instead of O(n^2 (d_x + d_y))."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"sample-count mismatch: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("CKA needs at least 2 samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    denom = (n - 1) ** 2
    hxy = float(np.sum((xc.T @ yc) ** 2)) / denom
    hxx = float(np.sum((xc.T @ xc) ** 2)) / denom
    hyy = float(np.sum((yc.T @ yc) ** 2)) / denom
    return _score_from_hsic(hxy, hxx, hyy)


def layer_score(
    r: np.ndarray, r_pruned: np.ndarray, kernel: Kernel = LINEAR
) -> SimilarityScore:
    """Importance score 1 - CKA(r, r_pruned); lower means safer to remove.

    The linear kernel goes through the feature-space formulation, which is
    equivalent to the Gram route within 1e-10.
    """
    if kernel.kind == "linear":
        return cka_linear_feature(r, r_pruned)
    return cka(r, r_pruned, kernel)
