"""Dense float64 matrix primitives for the similarity math.

Convention: samples are rows, features are columns, row-major storage.
"""

import numpy as np


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf entries")
    return np.ascontiguousarray(arr)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} x {b.shape}")
    return a @ b


def gram_linear(x: np.ndarray) -> np.ndarray:
    """Linear-kernel Gram matrix K = x x^T over sample rows."""
    x = as_matrix(x, "x")
    if x.shape[0] < 2:
        raise ValueError(f"gram matrix needs >= 2 samples, got {x.shape[0]}")
    return x @ x.T


def center_gram(k: np.ndarray) -> np.ndarray:
    """Double-center a Gram matrix: H K H with H = I - (1/n) 11^T."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"gram matrix must be square, got shape {k.shape}")
    col_means = k.mean(axis=0)
    row_means = k.mean(axis=1)
    return k - col_means[None, :] - row_means[:, None] + k.mean()


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product sum_ij a_ij * b_ij."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))
