"""Probes that check the class-frequency structure of live training state.

Three families:
  * pairwise cosine similarity of per-sample gradients, computed through
    the factorization <a_i (x) x_i, a_j (x) x_j> = <a_i,a_j><x_i,x_j>,
    which shows the within-class alignment that makes clipped gradients
    accumulate proportionally to class frequency;
  * per-class gradient block norms, whose scale tracks pi_k;
  * the DP bias in adaptive second moments: the noise adds
    (sigma*C/L)^2 per coordinate of the aggregated gradient, and the
    fraction of v_hat coordinates at or below a small multiple of that
    floor measures how much of the curvature estimate is pure noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dp_core import DpConfig
from .linear_model import ClassStats, GradFactors, full_gradient, softmax_rows
from .optimizers import OptState

DEFAULT_COSINE_SAMPLES = 520
DEFAULT_COSINE_CAP = 1024
DEFAULT_NOISE_KAPPA = 2.0


@dataclass(frozen=True)
class CosineReport:
    """Class-sorted pairwise cosine matrix over a sample of gradients."""

    matrix: np.ndarray       # (s, s) symmetric, entries in [-1, 1]
    sample_ids: np.ndarray   # (s,) dataset row ids, sorted by (class, id)
    classes: np.ndarray      # (s,) class of each row of the matrix
    zero_norm_ids: np.ndarray  # sample ids whose gradient norm is zero

    @property
    def within_class_mean(self) -> float:
        return _pair_mean(self.matrix, self.classes, same_class=True)

    @property
    def cross_class_mean(self) -> float:
        return _pair_mean(self.matrix, self.classes, same_class=False)


def _pair_mean(M: np.ndarray, classes: np.ndarray, same_class: bool) -> float:
    same = classes[:, None] == classes[None, :]
    offdiag = ~np.eye(len(classes), dtype=bool)
    mask = (same if same_class else ~same) & offdiag
    if not mask.any():
        return float("nan")
    return float(M[mask].mean())


def stratified_sample_ids(labels: np.ndarray, stats: ClassStats, size: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Pick `size` sample ids stratified by class.

    Every class gets at least one slot (so rare classes appear), the
    rest are shared proportionally to class frequency by largest
    remainder; ties resolve toward the smaller class id. Within a class
    the rows are drawn without replacement from rng.
    """
    labels = np.asarray(labels)
    c = len(stats.counts)
    if size < c:
        raise ValueError(f"need at least one slot per class: size {size} < {c} classes")
    if size > labels.size:
        raise ValueError(f"size {size} exceeds dataset size {labels.size}")

    alloc = np.ones(c, dtype=np.int64)
    spare = size - c
    ideal = spare * stats.frequencies
    extra = np.minimum(np.floor(ideal).astype(np.int64), stats.counts - alloc)
    alloc += extra
    remaining = size - int(alloc.sum())
    remainder = ideal - extra
    for k in np.lexsort((np.arange(c), -remainder)):
        if remaining == 0:
            break
        if alloc[k] < stats.counts[k]:
            alloc[k] += 1
            remaining -= 1
    if remaining:  # every preferred class saturated; fill wherever room remains
        for k in range(c):
            while remaining and alloc[k] < stats.counts[k]:
                alloc[k] += 1
                remaining -= 1

    picked = []
    for k in range(c):
        rows = np.flatnonzero(labels == k)
        picked.append(rng.choice(rows, size=int(alloc[k]), replace=False))
    return np.sort(np.concatenate(picked))


def cosine_matrix(factors: GradFactors, sample_ids,
                  cap: int = DEFAULT_COSINE_CAP) -> CosineReport:
    """Pairwise gradient cosines for the given rows, class-sorted.

    Rows whose gradient norm is zero get cosine 0 against everything by
    convention and are flagged in the report.
    """
    ids = np.asarray(sample_ids, dtype=np.int64)
    if ids.size > cap:
        raise ValueError(f"{ids.size} sample ids exceed the cap of {cap}")
    n = factors.A.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"sample ids must lie in [0, {n})")

    labels = factors.dataset.labels[ids]
    order = np.lexsort((ids, labels))
    ids = ids[order]
    labels = labels[order]

    As = factors.A[ids]
    Xs = factors.dataset.features[ids]
    num = (As @ As.T) * (Xs @ Xs.T)
    norms = np.linalg.norm(As, axis=1) * np.linalg.norm(Xs, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    M = num / np.outer(safe, safe)
    if zero.any():
        M[zero, :] = 0.0
        M[:, zero] = 0.0
    return CosineReport(matrix=M, sample_ids=ids, classes=labels,
                        zero_norm_ids=ids[zero])


def class_block_norms(factors: GradFactors) -> np.ndarray:
    """l2 norm of each class row of the mean-loss gradient."""
    return np.linalg.norm(full_gradient(factors), axis=1)


def estimate_p(Z: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax probability assigned to the correct class."""
    S = softmax_rows(np.asarray(Z, dtype=np.float64))
    return float(S[np.arange(S.shape[0]), np.asarray(labels)].mean())


def estimate_p_per_class(Z: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Correct-class softmax probability averaged within each class."""
    labels = np.asarray(labels)
    S = softmax_rows(np.asarray(Z, dtype=np.float64))
    p = S[np.arange(S.shape[0]), labels]
    sums = np.bincount(labels, weights=p, minlength=num_classes)
    counts = np.bincount(labels, minlength=num_classes)
    return sums / np.maximum(counts, 1)


def noise_dominated_fraction(v_hat: np.ndarray, noise_floor: float,
                             kappa: float = DEFAULT_NOISE_KAPPA) -> float:
    """Fraction of v_hat coordinates at or below kappa * noise_floor.

    Zero floor means no noise, so nothing is noise-dominated.
    """
    if noise_floor == 0.0:
        return 0.0
    return float(np.mean(np.asarray(v_hat) <= kappa * noise_floor))


@dataclass(frozen=True)
class SecondMomentBias:
    noise_floor: float
    kappa: float
    dominated_fraction: float


def second_moment_bias_report(state: OptState, cfg: DpConfig,
                              kappa: float = DEFAULT_NOISE_KAPPA) -> SecondMomentBias:
    """Noise floor and noise-dominated fraction of the bias-corrected v."""
    if state.v is None:
        raise ValueError(f"optimizer kind {state.kind!r} keeps no second moment")
    if state.t == 0:
        raise ValueError("second moment is undefined before the first step")
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return SecondMomentBias(
        noise_floor=cfg.noise_floor,
        kappa=kappa,
        dominated_fraction=noise_dominated_fraction(v_hat, cfg.noise_floor, kappa),
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """One probe of training state, serialized as a JSON record; the
    cosine matrix itself goes to a separate .npy file next to it."""

    step: int
    p_hat: float
    p_hat_per_class: np.ndarray
    block_norms: np.ndarray
    cosine: CosineReport
    noise_floor: float | None
    dominated_fraction: float | None
    matrix_path: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "p_hat": self.p_hat,
            "p_hat_per_class": self.p_hat_per_class.tolist(),
            "block_norms": self.block_norms.tolist(),
            "noise_floor": self.noise_floor,
            "dominated_fraction": self.dominated_fraction,
            "cosine": {
                "within_class_mean": self.cosine.within_class_mean,
                "cross_class_mean": self.cosine.cross_class_mean,
                "sample_ids": self.cosine.sample_ids.tolist(),
                "classes": self.cosine.classes.tolist(),
                "zero_norm_ids": self.cosine.zero_norm_ids.tolist(),
                "matrix_path": self.matrix_path,
            },
        }


def build_report(step: int, Z: np.ndarray, factors: GradFactors,
                 sample_ids: np.ndarray, cfg: DpConfig,
                 state: OptState | None = None,
                 kappa: float = DEFAULT_NOISE_KAPPA) -> DiagnosticsReport:
    labels = factors.dataset.labels
    bias = None
    if state is not None and state.v is not None and state.t > 0:
        bias = second_moment_bias_report(state, cfg, kappa)
    return DiagnosticsReport(
        step=step,
        p_hat=estimate_p(Z, labels),
        p_hat_per_class=estimate_p_per_class(Z, labels, factors.dataset.c),
        block_norms=class_block_norms(factors),
        cosine=cosine_matrix(factors, sample_ids),
        noise_floor=bias.noise_floor if bias else None,
        dominated_fraction=bias.dominated_fraction if bias else None,
    )


def write_report(report: DiagnosticsReport, out_dir, jsonl_name: str = "diagnostics.jsonl") -> DiagnosticsReport:
    """Append the JSON record and drop the cosine matrix as .npy."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix_name = f"cosine_step{report.step}.npy"
    np.save(out_dir / matrix_name, report.cosine.matrix)
    report = DiagnosticsReport(**{**report.__dict__, "matrix_path": matrix_name})
    with open(out_dir / jsonl_name, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_json_dict()) + "\n")
    return report
