import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mtscene.balancer import (
    BalancerConfig,
    TaskBalancer,
    awu_step,
    check_weights,
    gram,
    init_state,
    next_weights,
    optimal_weights,
    solve_alignment,
)
from mtscene.errors import ConfigError, DataError, NumericalError

getcontext().prec = 40

weights_st = st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3).map(lambda w: np.array(w) / np.sum(w))
losses_st = st.lists(st.floats(0.0, 20.0), min_size=3, max_size=3).map(np.array)
eta_st = st.floats(1e-3, 2.0)


@given(weights_st, losses_st, eta_st)
def test_awu_output_on_simplex(w, losses, eta):
    out = awu_step(w, losses, BalancerConfig(eta=eta))
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) < 1e-9


@given(weights_st, st.floats(0.0, 20.0), eta_st)
def test_awu_equal_losses_preserve_weights(w, loss, eta):
    out = awu_step(w, np.full(3, loss), BalancerConfig(eta=eta))
    np.testing.assert_allclose(out, w, rtol=0, atol=1e-12)


@given(weights_st, losses_st, eta_st, st.floats(-10.0, 10.0))
def test_awu_shift_invariance(w, losses, eta, c):
    cfg = BalancerConfig(eta=eta)
    np.testing.assert_allclose(awu_step(w, losses + c, cfg), awu_step(w, losses, cfg), rtol=0, atol=1e-12)


def _ordered_unfloored(losses, out, eps):
    # weights clamped at the eps floor carry no ordering information
    free = out > 2 * eps
    return [(a, b) for a in range(3) for b in range(3) if losses[a] < losses[b] and free[a] and free[b]]


@given(weights_st, losses_st, eta_st)
def test_awu_monotone(w, losses, eta):
    cfg = BalancerConfig(eta=eta)
    out = awu_step(w, losses, cfg)
    ratio = out / w
    for a, b in _ordered_unfloored(losses, out, cfg.eps):
        assert ratio[a] >= ratio[b] * (1 - 1e-12)


@given(weights_st, losses_st, eta_st)
def test_amplify_sign_reverses_monotonicity(w, losses, eta):
    cfg = BalancerConfig(eta=eta, sign="amplify-high-loss")
    out = awu_step(w, losses, cfg)
    ratio = out / w
    for a, b in _ordered_unfloored(losses, out, cfg.eps):
        assert ratio[a] <= ratio[b] * (1 + 1e-12)


def test_awu_hand_case():
    # exact: 0.5 * exp(0) = 0.5, 0.5 * exp(-ln 2) = 0.25 -> (2/3, 1/3)
    half = Decimal(1) / 2
    raw = [half * Decimal(0).exp(), half * (-Decimal(2).ln()).exp()]
    expected = [float(r / sum(raw)) for r in raw]
    out = awu_step([0.5, 0.5], [0.0, math.log(2)], BalancerConfig(eta=1.0, eps=1e-300))
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-9)
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=0, atol=1e-9)


def test_awu_errors():
    with pytest.raises(NumericalError):
        awu_step(np.full(3, 1 / 3), [1.0, np.nan, 0.0])
    with pytest.raises(DataError):
        awu_step(np.full(3, 1 / 3), [1.0, 2.0])


def test_config_validation():
    with pytest.raises(ConfigError):
        BalancerConfig(eta=0.0)
    with pytest.raises(ConfigError):
        BalancerConfig(mode="gradnorm")
    with pytest.raises(ConfigError):
        BalancerConfig(lambda_reg=-1.0)
    with pytest.raises(ConfigError):
        check_weights([0.5, 0.6, -0.1])
    with pytest.raises(ConfigError):
        check_weights([0.5, 0.5], 3)


# gradient alignment


def test_gram_examples():
    np.testing.assert_array_equal(gram(np.eye(2, 5)), np.eye(2))
    g = np.array([[2.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(gram(g, 1.0), [[5.0, 4.0], [4.0, 5.0]])
    np.testing.assert_array_equal(gram(np.zeros((3, 4)), 1.0), np.eye(3))


@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 10.0))
def test_gram_symmetric_positive_definite(seed, lam):
    g = np.random.default_rng(seed).normal(size=(3, 20))
    m = gram(g, lam)
    assert np.max(np.abs(m - m.T)) <= 1e-12
    np.linalg.cholesky(m)


def test_orthogonal_equal_norm_gives_uniform():
    g = 3.0 * np.eye(3, 10)
    np.testing.assert_allclose(optimal_weights(g, BalancerConfig(lambda_reg=0.0)), np.full(3, 1 / 3), rtol=0, atol=1e-9)


def test_two_task_hand_case():
    g = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    np.testing.assert_allclose(solve_alignment(g, 0.0), [1.0, 0.25], rtol=0, atol=1e-15)
    np.testing.assert_allclose(optimal_weights(g, BalancerConfig(lambda_reg=0.0)), [0.8, 0.2], rtol=0, atol=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_large_lambda_gives_uniform(seed):
    g = np.random.default_rng(seed).normal(size=(3, 50))
    np.testing.assert_allclose(optimal_weights(g, BalancerConfig(lambda_reg=1e6)), np.full(3, 1 / 3), rtol=0, atol=1e-3)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_solve_residual(seed, lam):
    g = np.random.default_rng(seed).normal(size=(3, 40))
    m = gram(g, lam)
    assume(np.linalg.cond(m) < 1e6)
    w = solve_alignment(g, lam)
    assert np.max(np.abs(m @ w - 1.0)) < 1e-8


def test_singular_system_advises_regularisation():
    g = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(NumericalError, match="lambda_reg > 0"):
        solve_alignment(g, 0.0)
    with pytest.raises(NumericalError):
        solve_alignment(np.zeros((2, 3)), 0.0)


@given(st.integers(0, 2**31 - 1))
def test_alignment_weights_on_simplex(seed):
    g = np.random.default_rng(seed).normal(size=(3, 10))
    w = optimal_weights(g)
    assert np.all(w > 0) and abs(w.sum() - 1) < 1e-9


# stateful balancer


def test_fixed_mode_returns_initial_weights():
    cfg = BalancerConfig(mode="fixed")
    state = init_state([0.2, 0.3, 0.5])
    for losses in ([1.0, 2.0, 3.0], [9.0, 0.0, 1.0]):
        np.testing.assert_array_equal(next_weights(state, losses, cfg=cfg), [0.2, 0.3, 0.5])


def test_alignment_every_two_steps_trace():
    cfg = BalancerConfig(mode="gradient-alignment", align_every=2, lambda_reg=0.0)
    state = init_state()
    g1 = np.diag([1.0, 2.0, 4.0])
    g2 = np.diag([2.0, 1.0, 1.0])
    trace = [
        next_weights(state, [1, 1, 1], cfg=cfg),
        next_weights(state, [1, 1, 1], g1, cfg=cfg),
        next_weights(state, [1, 1, 1], cfg=cfg),
        next_weights(state, [1, 1, 1], g2, cfg=cfg),
    ]
    np.testing.assert_array_equal(trace[0], np.full(3, 1 / 3))
    assert not np.allclose(trace[1], trace[0])
    np.testing.assert_array_equal(trace[2], trace[1])
    assert not np.allclose(trace[3], trace[2])
    raw = 1 / np.array([1.0, 4.0, 16.0])
    np.testing.assert_allclose(trace[1], raw / raw.sum(), atol=1e-12)


def test_alignment_without_gradients_fails():
    cfg = BalancerConfig(mode="gradient-alignment", align_every=1)
    with pytest.raises(DataError):
        next_weights(init_state(), [1, 2, 3], cfg=cfg)


def test_awu_anchor_modes():
    losses = [1.0, 2.0, 3.0]
    init = init_state()
    cfg = BalancerConfig(eta=0.5)
    a = next_weights(init, losses, cfg=cfg)
    b = next_weights(init, losses, cfg=cfg)
    np.testing.assert_array_equal(a, b)
    prev = init_state()
    cfg_prev = BalancerConfig(eta=0.5, anchor="previous")
    a = next_weights(prev, losses, cfg=cfg_prev)
    b = next_weights(prev, losses, cfg=cfg_prev)
    np.testing.assert_allclose(b, awu_step(a, losses, cfg_prev), atol=1e-15)
    assert b[0] > a[0]


def test_task_balancer_estimator():
    tb = TaskBalancer(mode="awu", eta=1.0)
    assert tb.get_params()["eta"] == 1.0
    tb.partial_fit([0.0, 0.0, math.log(2)])
    assert tb.weights_.shape == (3,)
    assert tb.weights_[0] > tb.weights_[2]
    ga = TaskBalancer(mode="gradient-alignment", align_every=1)
    assert ga.needs_gradients()
    with pytest.raises(DataError):
        ga.partial_fit([1, 1, 1])
