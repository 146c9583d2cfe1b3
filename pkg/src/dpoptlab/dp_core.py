"""Per-sample clipping, noisy aggregation, and Renyi-DP accounting.

Clipping acts on the rank-1 factors: the per-sample gradient norm is
||a_i|| * ||x_i||, so scaling row i of A by 1/max(1, r_i/C) scales the
dense gradient identically while preserving its direction. The noisy
aggregate is (1/L)(A'^T X + Z) with Z ~ N(0, sigma^2 C^2) i.i.d., added
after aggregation exactly as the update rules consume it.

Accounting composes the Gaussian mechanism in the full-batch regime
(batch = dataset, no subsampling amplification): rdp(alpha) =
T * alpha / (2 sigma^2), converted to (eps, delta) by minimizing
rdp(alpha) + log(1/delta)/(alpha - 1) over a fixed, versioned order
grid so reported eps values are stable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linear_model import GradFactors

# Versioned order grid: 64 geometrically spaced Renyi orders in [1.25, 512].
ORDER_GRID_V1: tuple[float, ...] = tuple(
    float(a) for a in np.geomspace(1.25, 512.0, 64)
)

QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class DpConfig:
    """Privatization parameters: clip norm C, noise multiplier sigma,
    aggregation denominator L (= n in full batch), failure probability delta."""

    clip_norm: float
    noise_multiplier: float
    sample_size: int
    delta: float = 1e-5

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError(f"noise_multiplier must be >= 0, got {self.noise_multiplier}")
        if self.sample_size < 1:
            raise ValueError(f"sample_size must be >= 1, got {self.sample_size}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def noise_floor(self) -> float:
        """(sigma C / L)^2, the variance the noise adds per coordinate of
        the aggregated gradient."""
        return (self.noise_multiplier * self.clip_norm / self.sample_size) ** 2


@dataclass(frozen=True)
class PrivateGradient:
    """Clipped, aggregated, noised gradient for one step."""

    matrix: np.ndarray  # (c, d)
    step: int


@dataclass(frozen=True)
class ClipStats:
    fraction_clipped: float
    quantile_levels: tuple[float, ...]
    pre_norm_quantiles: tuple[float, ...]
    post_norm_quantiles: tuple[float, ...]

    def to_json_dict(self) -> dict:
        return {
            "fraction_clipped": self.fraction_clipped,
            "quantile_levels": list(self.quantile_levels),
            "pre_norm_quantiles": list(self.pre_norm_quantiles),
            "post_norm_quantiles": list(self.post_norm_quantiles),
        }


def clip_factors(factors: GradFactors, clip_norm: float) -> tuple[GradFactors, ClipStats]:
    """Scale each per-sample gradient to norm at most clip_norm.

    Rows with r_i <= clip_norm are multiplied by exactly 1.0 and stay
    bit-identical.
    """
    r = factors.row_norms
    scale = 1.0 / np.maximum(1.0, r / clip_norm)
    clipped = GradFactors(A=factors.A * scale[:, None], dataset=factors.dataset)
    post = r * scale
    stats = ClipStats(
        fraction_clipped=float(np.mean(r > clip_norm)),
        quantile_levels=QUANTILE_LEVELS,
        pre_norm_quantiles=tuple(float(q) for q in np.quantile(r, QUANTILE_LEVELS)),
        post_norm_quantiles=tuple(float(q) for q in np.quantile(post, QUANTILE_LEVELS)),
    )
    return clipped, stats


def clipped_fraction(factors: GradFactors, clip_norm: float) -> float:
    """Fraction of per-sample gradients with norm above clip_norm."""
    return float(np.mean(factors.row_norms > clip_norm))


def privatize(clipped: GradFactors, cfg: DpConfig,
              rng: np.random.Generator | None = None, step: int = 0) -> PrivateGradient:
    """(1/L)(A'^T X + Z), Z i.i.d. N(0, sigma^2 C^2).

    With sigma = 0 no noise is drawn, so the result is deterministic and
    rng-independent.
    """
    agg = clipped.A.T @ clipped.dataset.features
    if cfg.noise_multiplier > 0:
        if rng is None:
            raise ValueError("privatize with noise_multiplier > 0 requires an rng")
        agg += rng.standard_normal(agg.shape) * (cfg.noise_multiplier * cfg.clip_norm)
    agg /= cfg.sample_size
    return PrivateGradient(matrix=agg, step=step)


@dataclass
class AccountantState:
    """Composition state of the full-batch Gaussian mechanism."""

    noise_multiplier: float
    steps: int = 0
    orders: tuple[float, ...] = field(default=ORDER_GRID_V1)

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if any(a <= 1.0 for a in self.orders):
            raise ValueError("all Renyi orders must be > 1")


class EpsilonResult(NamedTuple):
    epsilon: float
    order: float  # the order achieving the minimum; nan for the inf sentinel


def rdp_of_gaussian(state: AccountantState, num_steps: int) -> np.ndarray:
    """Per-order RDP of num_steps compositions: T * alpha / (2 sigma^2)."""
    if state.noise_multiplier <= 0:
        raise ValueError("rdp_of_gaussian requires noise_multiplier > 0")
    orders = np.asarray(state.orders, dtype=np.float64)
    return num_steps * orders / (2.0 * state.noise_multiplier**2)


def epsilon(state: AccountantState, num_steps: int | None = None,
            delta: float = 1e-5) -> EpsilonResult:
    """(eps, best order) after num_steps (default: state.steps) compositions.

    sigma = 0 yields the infinity sentinel: no noise means no finite
    guarantee.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    T = state.steps if num_steps is None else num_steps
    if state.noise_multiplier <= 0:
        return EpsilonResult(math.inf, math.nan)
    orders = np.asarray(state.orders, dtype=np.float64)
    eps_all = rdp_of_gaussian(state, T) + math.log(1.0 / delta) / (orders - 1.0)
    i = int(np.argmin(eps_all))
    return EpsilonResult(float(eps_all[i]), float(orders[i]))


def calibrate_steps(noise_multiplier: float, delta: float, target_epsilon: float,
                    orders: tuple[float, ...] = ORDER_GRID_V1) -> int:
    """Largest step count T with epsilon(T) <= target_epsilon.

    epsilon(T) is nondecreasing in T, so a doubling search followed by
    bisection is exact.
    """
    state = AccountantState(noise_multiplier=noise_multiplier, orders=orders)
    if epsilon(state, 0, delta).epsilon > target_epsilon:
        raise ValueError(
            f"target epsilon {target_epsilon} is below the T=0 floor "
            f"{epsilon(state, 0, delta).epsilon:.4f} for this order grid"
        )
    hi = 1
    while epsilon(state, hi, delta).epsilon <= target_epsilon:
        hi *= 2
    lo = hi // 2  # eps(lo) <= target < eps(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if epsilon(state, mid, delta).epsilon <= target_epsilon:
            lo = mid
        else:
            hi = mid
    return lo
