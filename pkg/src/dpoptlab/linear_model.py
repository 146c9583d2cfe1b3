"""Softmax linear classifier with rank-1 factorized per-sample gradients.

Weights are plain (c, d) float64 arrays; nothing here wraps them. The
per-sample gradient of the cross-entropy loss w.r.t. the full weight
matrix factors as outer(a_i, x_i) with a_i = softmax(W x_i) - e_{y_i},
so norms, inner products, clipping and aggregation are all computed from
the (n, c) factor matrix A and the input rows, never from the dense
(n, c, d) tensor.

All reductions run in float64 with numpy's fixed-order BLAS/ufunc
semantics, so results are deterministic for a given build and thread
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ShapeMismatchError, HessianDimError

DEFAULT_HESSIAN_DIM_CAP = 512


@dataclass(frozen=True)
class Dataset:
    """Feature matrix in [0,1]^d with integer class labels.

    Features are held in float64 for compute; the on-disk format is
    float32 (see synth_data), and generated datasets only ever contain
    float32-representable values so save/load round-trips are bit exact.
    """

    features: np.ndarray  # (n, d) float64, entries in [0, 1]
    labels: np.ndarray    # (n,) int64, values in [0, c)
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeMismatchError(
                f"labels shape {self.labels.shape} does not match "
                f"features shape {self.features.shape}",
                left_shape=self.labels.shape,
                right_shape=self.features.shape,
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if (counts == 0).any():
            missing = np.flatnonzero(counts == 0)
            raise ValueError(f"classes {missing.tolist()} have no samples")
        lo, hi = float(self.features.min()), float(self.features.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"feature entries must lie in [0, 1], found [{lo}, {hi}]")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.num_classes

    @cached_property
    def feature_norms(self) -> np.ndarray:
        """Per-row l2 norms ||x_i||, cached (reused by every clipping call)."""
        return np.linalg.norm(self.features, axis=1)


@dataclass(frozen=True)
class ClassStats:
    """Per-class counts n_k, frequencies pi_k = n_k/n, and group membership."""

    counts: np.ndarray          # (c,) int64
    frequencies: np.ndarray     # (c,) float64, sums to 1
    group_of_class: np.ndarray  # (c,) int64, class id -> frequency-group id

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=np.float64))
        object.__setattr__(self, "group_of_class", np.asarray(self.group_of_class, dtype=np.int64))
        if not (self.counts.shape == self.frequencies.shape == self.group_of_class.shape):
            raise ShapeMismatchError(
                f"counts {self.counts.shape}, frequencies {self.frequencies.shape} and "
                f"group_of_class {self.group_of_class.shape} must all have shape (c,)"
            )
        if (self.counts <= 0).any():
            raise ValueError("every class must have a positive count")
        if abs(float(self.frequencies.sum()) - 1.0) > 1e-12:
            raise ValueError(f"frequencies sum to {self.frequencies.sum()}, not 1")

    @classmethod
    def from_labels(cls, labels, num_classes: int, group_of_class=None) -> "ClassStats":
        counts = np.bincount(np.asarray(labels), minlength=num_classes)
        if group_of_class is None:
            group_of_class = np.zeros(num_classes, dtype=np.int64)
        return cls(counts, counts / counts.sum(), group_of_class)

    @property
    def num_groups(self) -> int:
        return int(self.group_of_class.max()) + 1

    @cached_property
    def group_counts(self) -> np.ndarray:
        """Samples per frequency group."""
        return np.bincount(self.group_of_class, weights=self.counts,
                           minlength=self.num_groups).astype(np.int64)


@dataclass(frozen=True)
class GradFactors:
    """Rank-1 factorization of all per-sample gradients at one weight point.

    Row i of A is a_i = softmax(W x_i) - e_{y_i}; the dense per-sample
    gradient is outer(a_i, x_i). Rows sum to zero by softmax
    normalization.
    """

    A: np.ndarray  # (n, c) float64
    dataset: Dataset = field(repr=False)

    @cached_property
    def row_norms(self) -> np.ndarray:
        """Per-sample gradient norms ||a_i|| * ||x_i||."""
        return np.linalg.norm(self.A, axis=1) * self.dataset.feature_norms


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction (overflow safe)."""
    M = Z - Z.max(axis=1, keepdims=True)
    np.exp(M, out=M)
    M /= M.sum(axis=1, keepdims=True)
    return M


def logits(W: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Z = X W^T, shape (n, c)."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != dataset.d:
        raise ShapeMismatchError(
            f"weights shape {W.shape} incompatible with features shape "
            f"{dataset.features.shape} (expected (c, {dataset.d}))",
            left_shape=W.shape,
            right_shape=dataset.features.shape,
        )
    return dataset.features @ W.T


def per_sample_losses(Z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy losses l_i = logsumexp(z_i) - z_{i, y_i}."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    zmax = Z.max(axis=1)
    lse = np.log(np.exp(Z - zmax[:, None]).sum(axis=1)) + zmax
    return lse - Z[np.arange(Z.shape[0]), labels]


def mean_loss(Z: np.ndarray, labels: np.ndarray) -> float:
    return float(per_sample_losses(Z, labels).mean())


def grad_factors(Z: np.ndarray, dataset: Dataset) -> GradFactors:
    """Logit-error rows a_i = softmax(z_i) - e_{y_i} for every sample."""
    A = softmax_rows(Z)
    A[np.arange(A.shape[0]), dataset.labels] -= 1.0
    return GradFactors(A=A, dataset=dataset)


def full_gradient(factors: GradFactors) -> np.ndarray:
    """Gradient of the mean loss, (1/n) A^T X, shape (c, d).

    Equals the mean of the dense per-sample gradients outer(a_i, x_i);
    the dense form is never materialized.
    """
    X = factors.dataset.features
    return factors.A.T @ X / X.shape[0]


def hessian_block(Z: np.ndarray, dataset: Dataset, k: int,
                  dim_cap: int = DEFAULT_HESSIAN_DIM_CAP) -> np.ndarray:
    """Exact diagonal Hessian block for class k: (1/n) sum_i s_ik (1-s_ik) x_i x_i^T.

    Diagnostics-only; refuses d > dim_cap to guard against accidental
    d^2 allocations at experiment scale.
    """
    if dataset.d > dim_cap:
        raise HessianDimError(dataset.d, dim_cap)
    s = softmax_rows(Z)[:, k]
    w = s * (1.0 - s)
    X = dataset.features
    return (X * w[:, None]).T @ X / X.shape[0]


def accuracy(Z: np.ndarray, labels: np.ndarray,
             stats: ClassStats) -> tuple[float, np.ndarray]:
    """Overall and per-frequency-group accuracy.

    Prediction is argmax over classes; numpy's argmax takes the first
    maximum, which implements the lowest-class-id tie break.
    """
    pred = np.argmax(Z, axis=1)
    hits = (pred == np.asarray(labels)).astype(np.float64)
    overall = float(hits.mean())
    return overall, group_means(hits, labels, stats)


def group_means(values: np.ndarray, labels: np.ndarray,
                stats: ClassStats) -> np.ndarray:
    """Mean of a per-sample quantity over each frequency group."""
    groups = stats.group_of_class[np.asarray(labels)]
    G = stats.num_groups
    sums = np.bincount(groups, weights=np.asarray(values, dtype=np.float64), minlength=G)
    sizes = np.bincount(groups, minlength=G)
    return sums / np.maximum(sizes, 1)
