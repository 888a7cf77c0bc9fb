import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GRAD_TOL, da_gradient_case, plain_bn, random_block, worst_grad_error
from dalign import dal
from dalign.dal import DaLayerState, Mode, compute_mixed_statistics, da_backward, da_forward
from dalign.errors import AlphaRangeError, DimensionError, EmptyDomainError, StateError
from dalign.oracle import brute_statistics


def col(*values):
    return np.array(values, dtype=np.float64)[:, None]


# statistics -----------------------------------------------------------------

def test_symmetric_mixture():
    s = compute_mixed_statistics(col(2), col(0), 0.5)
    assert s.mu_st[0] == s.mu_ts[0] == 1.0


def test_alpha_one_decouples():
    s = compute_mixed_statistics(col(1, 3), col(10), 1.0)
    assert s.mu_st[0] == 2.0 and s.mu_ts[0] == 10.0


def test_derived_mixture_example():
    # 0.75 * mean(x_s) + 0.25 * mean(x_t); 0.75 * mean((x_s - 2.25)^2) + 0.25 * mean((x_t - 2.25)^2)
    s = compute_mixed_statistics(col(0, 2), col(4, 8), 0.75)
    ref = brute_statistics(col(0, 2), col(4, 8), 0.75)
    assert s.mu_st[0] == pytest.approx(2.25, abs=1e-15) == ref.mu_st[0]
    assert s.var_st[0] == pytest.approx(6.4375, abs=1e-12)
    assert ref.var_st[0] == pytest.approx(6.4375, abs=1e-12)


def test_statistics_errors():
    with pytest.raises(EmptyDomainError):
        compute_mixed_statistics(np.zeros((0, 2)), np.ones((3, 2)), 0.7)
    with pytest.raises(AlphaRangeError):
        compute_mixed_statistics(col(1, 2), col(3), 0.4)
    with pytest.raises(DimensionError):
        compute_mixed_statistics(np.ones((2, 2)), np.ones((2, 3)), 0.7)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n_s=st.integers(1, 5),
    n_t=st.integers(1, 5),
    channels=st.integers(1, 3),
    spatial=st.sampled_from([1, 9]),
    alpha=st.floats(0.5, 1.0),
)
def test_statistics_match_brute_force(seed, n_s, n_t, channels, spatial, alpha):
    rng = np.random.default_rng(seed)
    shape = (channels,) if spatial == 1 else (channels, 3, 3)
    x_s = rng.normal(size=(n_s,) + shape)
    x_t = rng.normal(2.0, 3.0, size=(n_t,) + shape)
    fast = compute_mixed_statistics(x_s, x_t, alpha)
    ref = brute_statistics(x_s, x_t, alpha)
    for name in ("mu_st", "var_st", "mu_ts", "var_ts"):
        assert np.allclose(getattr(fast, name), getattr(ref, name), rtol=0, atol=1e-12)
    assert np.all(fast.var_st >= 0) and np.all(fast.var_ts >= 0)


# forward ---------------------------------------------------------------------

def test_constant_input_maps_to_zero():
    state = DaLayerState(2, alpha=0.6)
    y_s, y_t, _ = da_forward(np.full((3, 2), 7.0), np.full((2, 2), 7.0), state)
    assert np.array_equal(y_s, np.zeros((3, 2))) and np.array_equal(y_t, np.zeros((2, 2)))


def test_derived_forward_example():
    state = DaLayerState(1, alpha=0.75, eps=1e-300)
    y_s, _, _ = da_forward(col(0, 2), col(4, 8), state)
    expected = (np.array([0.0, 2.0]) - 2.25) / math.sqrt(6.4375)
    assert np.allclose(y_s[:, 0], expected, rtol=0, atol=1e-15)


def test_alpha_half_is_pooled_batch_norm(rng):
    for spatial in (1, 9):
        x_s = random_block(rng, 4, 3, spatial)
        x_t = random_block(rng, 4, 3, spatial) + 2.0
        y_s, y_t, _ = da_forward(x_s, x_t, DaLayerState(3, alpha=0.5))
        ref = plain_bn(np.concatenate([x_s, x_t]), 1e-5)
        assert np.abs(np.concatenate([y_s, y_t]) - ref).max() <= 1e-12


def test_alpha_one_is_per_domain_batch_norm(rng):
    x_s = random_block(rng, 3, 4, 9)
    x_t = random_block(rng, 5, 4, 9) * 3.0
    y_s, y_t, _ = da_forward(x_s, x_t, DaLayerState(4, alpha=1.0))
    assert np.abs(y_s - plain_bn(x_s, 1e-5)).max() <= 1e-12
    assert np.abs(y_t - plain_bn(x_t, 1e-5)).max() <= 1e-12


def test_normalization_property(rng):
    x_s = rng.normal(5.0, 2.0, size=(6, 3))
    y_s, _, _ = da_forward(x_s, rng.normal(size=(2, 3)), DaLayerState(3, alpha=1.0, eps=1e-300))
    assert np.allclose(y_s.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(y_s.var(axis=0), 1.0, atol=1e-9)


def test_forward_channel_mismatch():
    with pytest.raises(DimensionError):
        da_forward(np.ones((2, 3)), np.ones((2, 3)), DaLayerState(2))


def test_frozen_without_stats():
    state = DaLayerState(1)
    state.mode = Mode.FROZEN
    with pytest.raises(StateError):
        da_forward(col(1.0), col(2.0), state)


# backward ---------------------------------------------------------------------

def test_zero_upstream_gradient(rng):
    x_s, x_t = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
    _, _, cache = da_forward(x_s, x_t, DaLayerState(2, alpha=0.7))
    dx_s, dx_t, d_alpha = da_backward(cache, np.zeros((3, 2)), np.zeros((2, 2)))
    assert not dx_s.any() and not dx_t.any() and d_alpha == 0.0


def test_alpha_one_source_path_is_batch_norm_backward(rng):
    x_s, x_t = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
    eps = 1e-5
    _, _, cache = da_forward(x_s, x_t, DaLayerState(3, alpha=1.0, eps=eps))
    g = rng.normal(size=(4, 3))
    dx_s, _, _ = da_backward(cache, g, np.zeros((2, 3)))
    # textbook batch-norm input gradient
    n = x_s.shape[0]
    xhat = (x_s - x_s.mean(0)) / np.sqrt(x_s.var(0) + eps)
    ref = (n * g - g.sum(0) - xhat * (g * xhat).sum(0)) / (n * np.sqrt(x_s.var(0) + eps))
    assert np.allclose(dx_s, ref, rtol=1e-12, atol=1e-13)


def test_documented_random_case():
    rng = np.random.default_rng(7)
    pairs = da_gradient_case(rng, 3, 2, 2, 1, 0.7)
    assert worst_grad_error(pairs) <= GRAD_TOL


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n_s=st.sampled_from([2, 3, 5]),
    n_t=st.sampled_from([2, 3, 5]),
    channels=st.sampled_from([1, 4]),
    spatial=st.sampled_from([1, 9]),
    alpha=st.sampled_from([0.5, 0.6, 0.9, 1.0]),
)
def test_backward_matches_finite_differences(seed, n_s, n_t, channels, spatial, alpha):
    pairs = da_gradient_case(np.random.default_rng(seed), n_s, n_t, channels, spatial, alpha)
    assert worst_grad_error(pairs) <= GRAD_TOL


def test_backward_reads_only_the_cache(rng):
    x_s, x_t = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    _, _, cache = da_forward(x_s, x_t, DaLayerState(2, alpha=0.8))
    g_s, g_t = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    before = da_backward(cache, g_s, g_t)
    x_s[:] = np.nan
    x_t[:] = np.nan
    after = da_backward(cache, g_s, g_t)
    assert all(np.array_equal(a, b) for a, b in zip(before, after))
    assert not any(np.shares_memory(x_s, v) for v in (cache.y_s, cache.y_st))


def test_backward_errors(rng):
    _, _, cache = da_forward(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), DaLayerState(2))
    with pytest.raises(DimensionError):
        da_backward(cache, np.zeros((2, 2)), np.zeros((2, 2)))
    cache.frozen = True
    with pytest.raises(StateError):
        da_backward(cache, np.zeros((3, 2)), np.zeros((2, 2)))


# alpha clip, moving averages, freeze ------------------------------------------

@pytest.mark.parametrize("raw, clipped", [(0.3, 0.5), (1.2, 1.0), (0.8, 0.8)])
def test_clip_alpha(raw, clipped):
    state = DaLayerState(1)
    state.alpha = raw
    assert dal.clip_alpha(state).alpha == clipped
    assert DaLayerState(1, alpha=raw).alpha == clipped


@given(st.floats(-1e9, 1e9, allow_nan=False))
def test_clip_alpha_range(raw):
    assert 0.5 <= DaLayerState(1, alpha=raw).alpha <= 1.0


def test_moving_average_full_replacement(rng):
    x_s, x_t = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    state = dal.update_moving_averages(DaLayerState(2, momentum_ma=1.0), x_s, x_t)
    assert np.allclose(state.moving_mu_s, x_s.mean(0), atol=1e-15)
    assert np.allclose(state.moving_var_t, x_t.var(0), atol=1e-15)


def test_moving_average_convex_step():
    state = dal.update_moving_averages(DaLayerState(1, momentum_ma=0.1), col(10.0), col(0.0))
    assert state.moving_mu_s[0] == pytest.approx(1.0, abs=1e-15)


def test_moving_average_converges():
    state = DaLayerState(1, momentum_ma=0.1)
    for _ in range(400):
        dal.update_moving_averages(state, col(2.0, 4.0), col(-1.0))
    assert state.moving_mu_s[0] == pytest.approx(3.0, abs=1e-12)
    assert state.moving_mu_t[0] == pytest.approx(-1.0, abs=1e-12)


def test_freeze_requires_updates():
    with pytest.raises(StateError):
        dal.freeze(DaLayerState(1))


def test_freeze_alpha_one_keeps_domain_stats(rng):
    state = DaLayerState(2, alpha=1.0)
    da_forward(rng.normal(size=(4, 2)), rng.normal(3, 1, size=(4, 2)), state)
    fs = dal.freeze(state).frozen_stats
    assert np.array_equal(fs.mu_st, state.moving_mu_s) and np.array_equal(fs.var_st, state.moving_var_s)
    assert np.array_equal(fs.mu_ts, state.moving_mu_t) and np.array_equal(fs.var_ts, state.moving_var_t)


def test_freeze_symmetric_equal_inputs():
    state = DaLayerState(1, alpha=0.5, moving_mu_s=np.array([1.5]), moving_mu_t=np.array([1.5]),
                         moving_var_s=np.array([2.0]), moving_var_t=np.array([2.0]), ma_updates=1)
    fs = dal.freeze(state).frozen_stats
    assert fs.mu_st[0] == fs.mu_ts[0] and fs.var_st[0] == fs.var_ts[0]


def test_freeze_total_variance_example():
    # 0.75 * (0 - 1)^2 + 0.25 * (4 - 1)^2 = 3
    state = DaLayerState(1, alpha=0.75, moving_mu_s=np.array([0.0]), moving_mu_t=np.array([4.0]),
                         moving_var_s=np.array([0.0]), moving_var_t=np.array([0.0]), ma_updates=1)
    fs = dal.freeze(state).frozen_stats
    assert fs.mu_st[0] == 1.0 and fs.var_st[0] == 3.0


def test_freeze_matches_batch_stats_on_stationary_stream(rng):
    x_s, x_t = rng.normal(size=(50, 3)), rng.normal(2, 3, size=(50, 3))
    state = DaLayerState(3, alpha=0.7, momentum_ma=1.0)
    da_forward(x_s, x_t, state)
    fs = dal.freeze(state).frozen_stats
    ref = compute_mixed_statistics(x_s, x_t, 0.7)
    assert np.allclose(fs.var_st, ref.var_st, atol=1e-12) and np.allclose(fs.mu_ts, ref.mu_ts, atol=1e-12)


def test_frozen_rows_are_independent(rng):
    state = DaLayerState(2, alpha=0.8)
    da_forward(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), state)
    dal.freeze(state)
    x = rng.normal(size=(5, 2))
    y_full, _, _ = da_forward(x, np.zeros((0, 2)), state)
    y_one, _, _ = da_forward(x[2:3], np.zeros((0, 2)), state)
    assert np.array_equal(y_full[2:3], y_one)
    dal.unfreeze(state)
    assert state.mode is Mode.TRAIN and state.frozen_stats is None
