import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpoptlab.dp_core import DpConfig, clip_factors, privatize
from dpoptlab.linear_model import grad_factors, logits
from dpoptlab.optimizers import (
    OptState,
    VALID_KINDS,
    dp_adam_step,
    dp_adambc_step,
    dp_gd_step,
    dp_gdm_step,
    make_optimizer,
    step,
)

from conftest import make_instance
from oracles import adam_positions, heavy_ball_trajectory, plain_gd_trajectory


def no_noise_cfg(n, C=1e12):
    return DpConfig(clip_norm=C, noise_multiplier=0.0, sample_size=n)


# ------------------------------------------------------------ construction

def test_make_optimizer_buffers():
    gd = make_optimizer("dp-gd", (3, 4), 0.1)
    assert gd.m is None and gd.v is None and gd.b is None and gd.t == 0
    gdm = make_optimizer("dp-gdm", (3, 4), 0.1)
    assert gdm.b.shape == (3, 4) and not gdm.b.any()
    adam = make_optimizer("dp-adam", (3, 4), 0.1)
    assert adam.m.shape == (3, 4) and adam.v.shape == (3, 4)
    assert not adam.m.any() and not adam.v.any() and adam.b is None


def test_make_optimizer_rejects_bad_inputs():
    with pytest.raises(ValueError) as exc:
        make_optimizer("adamw", (2, 2), 0.1)
    for kind in VALID_KINDS:
        assert kind in str(exc.value)
    with pytest.raises(ValueError, match="learning rate"):
        make_optimizer("dp-gd", (2, 2), -0.1)


def test_kind_normalization():
    assert make_optimizer("DP-AdamBC", (1, 1), 0.1).kind == "dp-adambc"
    assert make_optimizer("dp_gdm", (1, 1), 0.1).kind == "dp-gdm"


# ------------------------------------------------------------------ dp-gd

def test_gd_zero_gradient_keeps_weights():
    state = make_optimizer("dp-gd", (2, 3), 0.1)
    W = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(dp_gd_step(state, W, np.zeros((2, 3))), W)
    assert state.t == 1


def test_gd_all_ones_gradient():
    state = make_optimizer("dp-gd", (2, 3), 0.1)
    W1 = dp_gd_step(state, np.zeros((2, 3)), np.ones((2, 3)))
    np.testing.assert_allclose(W1, -0.1)


def test_gd_equals_plain_gd_without_noise_or_clipping():
    dataset, _ = make_instance(n=10, d=4, c=3, seed=21)
    cfg = no_noise_cfg(dataset.n)
    eta = 0.5
    state = make_optimizer("dp-gd", (3, 4), eta)
    W = np.zeros((3, 4))
    oracle = plain_gd_trajectory(W, dataset.features, dataset.labels, eta, steps=50)
    for t in range(50):
        factors = grad_factors(logits(W, dataset), dataset)
        clipped, stats = clip_factors(factors, cfg.clip_norm)
        assert stats.fraction_clipped == 0.0
        W = dp_gd_step(state, W, privatize(clipped, cfg).matrix)
        np.testing.assert_allclose(W, oracle[t], atol=1e-10)


# ----------------------------------------------------------------- dp-gdm

def test_gdm_first_step_is_raw_gradient():
    state = make_optimizer("dp-gdm", (2, 2), 0.3, mu=0.9)
    g1 = np.array([[1.0, -2.0], [0.5, 0.0]])
    W1 = dp_gdm_step(state, np.zeros((2, 2)), g1)
    np.testing.assert_array_equal(state.b, g1)
    np.testing.assert_allclose(W1, -0.3 * g1)


def test_gdm_second_step_unrolled():
    state = make_optimizer("dp-gdm", (1, 1), 1.0, mu=0.9)
    g1, g2 = np.array([[2.0]]), np.array([[-1.0]])
    W = dp_gdm_step(state, np.zeros((1, 1)), g1)
    W = dp_gdm_step(state, W, g2)
    np.testing.assert_allclose(state.b, 0.9 * g1 + g2)
    np.testing.assert_allclose(W, -g1 - (0.9 * g1 + g2))


def test_gdm_zero_momentum_is_gd():
    rng = np.random.default_rng(3)
    gdm = make_optimizer("dp-gdm", (3, 2), 0.2, mu=0.0)
    gd = make_optimizer("dp-gd", (3, 2), 0.2)
    Wa = Wb = rng.standard_normal((3, 2))
    for _ in range(5):
        g = rng.standard_normal((3, 2))
        Wa = dp_gdm_step(gdm, Wa, g)
        Wb = dp_gd_step(gd, Wb, g)
        np.testing.assert_allclose(Wa, Wb, atol=1e-15)


def test_gdm_equals_heavy_ball_without_noise_or_clipping():
    dataset, _ = make_instance(n=10, d=4, c=3, seed=22)
    cfg = no_noise_cfg(dataset.n)
    eta, mu = 0.3, 0.9
    state = make_optimizer("dp-gdm", (3, 4), eta, mu=mu)
    W = np.zeros((3, 4))
    oracle = heavy_ball_trajectory(W, dataset.features, dataset.labels, eta, mu, steps=50)
    for t in range(50):
        factors = grad_factors(logits(W, dataset), dataset)
        clipped, _ = clip_factors(factors, cfg.clip_norm)
        W = dp_gdm_step(state, W, privatize(clipped, cfg).matrix)
        np.testing.assert_allclose(W, oracle[t], atol=1e-10)


# ---------------------------------------------------------------- dp-adam

def test_adam_first_step_normalizes_to_sign():
    state = make_optimizer("dp-adam", (1, 3), 0.01, gamma=1e-8)
    g = np.array([[5.0, -3.0, 1e-2]])  # |g| >= 1e6 * gamma throughout
    W1 = dp_adam_step(state, np.zeros((1, 3)), g)
    np.testing.assert_array_equal(np.sign(W1), -np.sign(g))
    # update magnitude is eta * |g| / (|g| + gamma), essentially eta
    np.testing.assert_allclose(np.abs(W1), 0.01, rtol=1e-5)


def test_adam_zero_gradient_first_step_keeps_weights():
    state = make_optimizer("dp-adam", (2, 2), 0.1)
    W = np.full((2, 2), 3.0)
    np.testing.assert_array_equal(dp_adam_step(state, W, np.zeros((2, 2))), W)


def test_adam_three_step_hand_trace():
    gs = [1.0, 1.0, -1.0]
    expected = adam_positions(gs, beta1=0.9, beta2=0.999, eta=1.0, gamma=1e-8)
    state = make_optimizer("dp-adam", (1, 1), 1.0, beta1=0.9, beta2=0.999, gamma=1e-8)
    W = np.zeros((1, 1))
    for g, want in zip(gs, expected):
        W = dp_adam_step(state, W, np.array([[g]]))
        assert W[0, 0] == pytest.approx(want, abs=1e-12)


# -------------------------------------------------------------- dp-adambc

def test_adambc_floor_active_everywhere():
    # v_hat <= (sigma C / L)^2 for every coordinate: denominator is sqrt(gamma')
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, sample_size=2)  # floor 0.25
    state = make_optimizer("dp-adambc", (1, 2), 1.0, gamma_prime=1e-8)
    g = np.array([[0.1, -0.2]])  # g^2 well below the floor
    W1 = dp_adambc_step(state, np.zeros((1, 2)), g, cfg)
    np.testing.assert_allclose(W1, -g / math.sqrt(1e-8), rtol=1e-12)


def test_adambc_zero_noise_matches_floored_adam():
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=0.0, sample_size=2)
    state = make_optimizer("dp-adambc", (1, 2), 0.5, gamma_prime=1e-8)
    g = np.array([[2.0, -0.5]])
    W1 = dp_adambc_step(state, np.zeros((1, 2)), g, cfg)
    v_hat = g**2  # t=1 bias correction is exact
    np.testing.assert_allclose(W1, -0.5 * g / np.sqrt(np.maximum(v_hat, 1e-8)),
                               rtol=1e-12)


def test_adambc_scalar_denominator_arithmetic():
    # sigma C / L = 0.5 and v_hat = 0.74: denominator sqrt(0.74 - 0.25) = 0.7
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, sample_size=2)
    state = make_optimizer("dp-adambc", (1, 1), 1.0)
    g = np.array([[math.sqrt(0.74)]])  # v_hat = g^2 = 0.74 at t=1
    W1 = dp_adambc_step(state, np.zeros((1, 1)), g, cfg)
    assert W1[0, 0] == pytest.approx(-g[0, 0] / 0.7, abs=1e-12)


def test_adambc_denominator_never_below_sqrt_gamma_prime():
    # gradients far below the noise floor would zero the denominator
    # without the gamma' floor
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=5.0, sample_size=2)
    state = make_optimizer("dp-adambc", (1, 4), 1.0, gamma_prime=1e-6)
    rng = np.random.default_rng(0)
    W = np.zeros((1, 4))
    for _ in range(20):
        g = rng.standard_normal((1, 4)) * 0.01
        W_next = dp_adambc_step(state, W, g, cfg)
        v_hat = state.v / (1 - 0.999**state.t)
        denom = np.sqrt(np.maximum(v_hat - cfg.noise_floor, 1e-6))
        assert denom.min() >= math.sqrt(1e-6) - 1e-15
        assert np.all(np.isfinite(W_next))
        W = W_next


# ------------------------------------------------------------- properties

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["dp-adam", "dp-adambc"]))
def test_second_moment_stays_nonnegative(seed, kind):
    rng = np.random.default_rng(seed)
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, sample_size=4)
    state = make_optimizer(kind, (2, 3), 0.1)
    W = np.zeros((2, 3))
    for _ in range(10):
        W = step(state, W, rng.standard_normal((2, 3)) * 10, cfg)
        assert np.all(state.v >= 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(VALID_KINDS))
def test_steps_commute_with_coordinate_permutation(seed, kind):
    rng = np.random.default_rng(seed)
    shape = (3, 4)
    perm = rng.permutation(np.prod(shape))
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, sample_size=4)

    def permuted(M):
        return M.reshape(-1)[perm].reshape(shape)

    s1 = make_optimizer(kind, shape, 0.05)
    s2 = make_optimizer(kind, shape, 0.05)
    W1 = rng.standard_normal(shape)
    W2 = permuted(W1)
    for _ in range(4):
        g = rng.standard_normal(shape)
        W1 = step(s1, W1, g, cfg)
        W2 = step(s2, W2, permuted(g), cfg)
        np.testing.assert_allclose(permuted(W1), W2, atol=1e-14)


def test_dispatch_requires_cfg_for_adambc():
    state = make_optimizer("dp-adambc", (1, 1), 0.1)
    with pytest.raises(ValueError, match="noise floor"):
        step(state, np.zeros((1, 1)), np.ones((1, 1)), None)
