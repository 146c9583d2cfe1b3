"""The four DP update rules over a shared private-gradient interface.

All four consume the same noised gradient matrix and differ only in how
they turn it into a parameter update:

  dp-gd      W' = W - eta * g
  dp-gdm     b  = g (t=1) or mu*b + g (t>1);  W' = W - eta * b
  dp-adam    m, v moving averages with bias correction;
             W' = W - eta * m_hat / (sqrt(v_hat) + gamma)
  dp-adambc  as dp-adam but the denominator subtracts the known noise
             variance: sqrt(max(v_hat - (sigma*C/L)^2, gamma_prime))

Steps mutate the state buffers in place and return the new weights;
the step counter is advanced inside each step function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp_core import DpConfig

VALID_KINDS = ("dp-gd", "dp-gdm", "dp-adam", "dp-adambc")


@dataclass
class OptState:
    kind: str
    eta: float
    mu: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    gamma: float = 1e-8
    gamma_prime: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    b: np.ndarray | None = None


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower().replace("_", "-")
    if k not in VALID_KINDS:
        raise ValueError(f"unknown optimizer kind {kind!r}; valid kinds: {', '.join(VALID_KINDS)}")
    return k


def make_optimizer(kind: str, shape: tuple[int, int], eta: float, *,
                   mu: float = 0.9, beta1: float = 0.9, beta2: float = 0.999,
                   gamma: float = 1e-8, gamma_prime: float = 1e-8) -> OptState:
    """Zero-initialized state; only the buffers the kind uses are allocated."""
    kind = normalize_kind(kind)
    if not eta > 0:
        raise ValueError(f"learning rate must be > 0, got {eta}")
    state = OptState(kind=kind, eta=eta, mu=mu, beta1=beta1, beta2=beta2,
                     gamma=gamma, gamma_prime=gamma_prime)
    if kind == "dp-gdm":
        state.b = np.zeros(shape)
    elif kind in ("dp-adam", "dp-adambc"):
        state.m = np.zeros(shape)
        state.v = np.zeros(shape)
    return state


def dp_gd_step(state: OptState, W: np.ndarray, gtilde: np.ndarray) -> np.ndarray:
    state.t += 1
    return W - state.eta * gtilde


def dp_gdm_step(state: OptState, W: np.ndarray, gtilde: np.ndarray) -> np.ndarray:
    state.t += 1
    if state.t == 1:
        state.b = gtilde.copy()
    else:
        state.b *= state.mu
        state.b += gtilde
    return W - state.eta * state.b


def _update_moments(state: OptState, gtilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moving averages plus bias correction; returns (m_hat, v_hat)."""
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * gtilde
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * np.square(gtilde)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return m_hat, v_hat


def dp_adam_step(state: OptState, W: np.ndarray, gtilde: np.ndarray) -> np.ndarray:
    m_hat, v_hat = _update_moments(state, gtilde)
    return W - state.eta * m_hat / (np.sqrt(v_hat) + state.gamma)


def dp_adambc_step(state: OptState, W: np.ndarray, gtilde: np.ndarray,
                   cfg: DpConfig) -> np.ndarray:
    m_hat, v_hat = _update_moments(state, gtilde)
    denom = np.sqrt(np.maximum(v_hat - cfg.noise_floor, state.gamma_prime))
    return W - state.eta * m_hat / denom


def step(state: OptState, W: np.ndarray, gtilde: np.ndarray,
         cfg: DpConfig | None = None) -> np.ndarray:
    """Dispatch one update by state.kind."""
    if state.kind == "dp-gd":
        return dp_gd_step(state, W, gtilde)
    if state.kind == "dp-gdm":
        return dp_gdm_step(state, W, gtilde)
    if state.kind == "dp-adam":
        return dp_adam_step(state, W, gtilde)
    if state.kind == "dp-adambc":
        if cfg is None:
            raise ValueError("dp-adambc needs the DpConfig to know the noise floor")
        return dp_adambc_step(state, W, gtilde, cfg)
    raise ValueError(f"unknown optimizer kind {state.kind!r}; valid kinds: {', '.join(VALID_KINDS)}")
