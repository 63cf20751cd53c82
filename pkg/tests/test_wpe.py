import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vacewpe import metrics
from vacewpe.room_sim import speech_like
from vacewpe.stft import Spectrogram, istft, stft
from vacewpe.wpe import (LpFilterBank, WpeConfig, apply_filters, build_delayed_stack,
                         compute_correlations, filter_residual, loading_level, psd_context_avg,
                         solve_filters, weighted_objective, wpe_iterative, wpe_with_psd)

from conftest import constructed_problem, crandn, rel_err


def naive_stack(X, delay, taps):
    T, F, D = X.shape
    out = np.zeros((T, F, D * taps), dtype=complex)
    for t in range(T):
        for f in range(F):
            for k in range(taps):
                for d in range(D):
                    if t - delay - k >= 0:
                        out[t, f, k * D + d] = X[t - delay - k, f, d]
    return out


def naive_psd(Z, context):
    T, F, D = Z.shape
    lam = np.zeros((T, F))
    for t in range(T):
        for f in range(F):
            acc, cnt = 0.0, 0
            for s in range(t - context, t + context + 1):
                if 0 <= s < T:
                    acc += sum(abs(Z[s, f, d]) ** 2 for d in range(D)) / D
                    cnt += 1
            lam[t, f] = acc / cnt
    return lam


def naive_correlations(stack, X, lam):
    T, F, n = stack.shape
    D = X.shape[2]
    R = np.zeros((F, n, n), dtype=complex)
    P = np.zeros((F, n, D), dtype=complex)
    for f in range(F):
        for t in range(T):
            for i in range(n):
                for j in range(n):
                    R[f, i, j] += stack[t, f, i] * np.conj(stack[t, f, j]) / lam[t, f]
                for d in range(D):
                    P[f, i, d] += stack[t, f, i] * np.conj(X[t, f, d]) / lam[t, f]
    return R, P


def naive_apply(X, stack, G):
    T, F, D = X.shape
    Z = X.copy()
    for t in range(T):
        for f in range(F):
            for d in range(D):
                Z[t, f, d] -= sum(np.conj(G[f, i, d]) * stack[t, f, i] for i in range(G.shape[1]))
    return Z


# -- delayed stack -----------------------------------------------------------

def test_stack_k1_is_shifted_copy(rng):
    X = crandn(rng, 8, 2, 1)
    s = build_delayed_stack(X, 1, 1)
    assert not s[0].any()
    np.testing.assert_array_equal(s[1:], X[:-1])


def test_stack_matches_naive(rng):
    X = crandn(rng, 12, 3, 2)
    np.testing.assert_array_equal(build_delayed_stack(X, 2, 3), naive_stack(X, 2, 3))


def test_stack_taps_beyond_length(rng):
    X = crandn(rng, 5, 2, 1)
    np.testing.assert_array_equal(build_delayed_stack(X, 2, 6), naive_stack(X, 2, 6))
    with pytest.raises(ValueError):
        build_delayed_stack(X, 5, 1)


# -- PSD ---------------------------------------------------------------------

def test_psd_no_context_single_channel(rng):
    Z = crandn(rng, 10, 4, 1)
    np.testing.assert_allclose(psd_context_avg(Z, 0), np.abs(Z[:, :, 0]) ** 2, rtol=1e-14)


def test_psd_constant_magnitude():
    Z = np.full((9, 3, 2), 1.5 * np.exp(0.3j))
    np.testing.assert_allclose(psd_context_avg(Z, 2), 2.25, rtol=1e-14)


@pytest.mark.parametrize("context", [0, 1, 2, 5])
def test_psd_matches_double_sum(rng, context):
    Z = crandn(rng, 11, 3, 2)
    np.testing.assert_allclose(psd_context_avg(Z, context, 0.0), naive_psd(Z, context), rtol=1e-12)


def test_psd_floor_after_averaging():
    Z = np.zeros((5, 2, 1))
    Z[2, 0, 0] = 3e-5  # power 9e-10, averaged over 3 frames = 3e-10
    lam = psd_context_avg(Z, 1, psd_floor=1e-10)
    assert lam[1, 0] == pytest.approx(3e-10)
    assert lam[0, 1] == 1e-10


def test_psd_channel_subset(rng):
    Z = crandn(rng, 6, 2, 2)
    np.testing.assert_array_equal(psd_context_avg(Z, 1, channels=[0]), psd_context_avg(Z[:, :, :1], 1))


# -- correlations ------------------------------------------------------------

def test_correlations_rank_one_for_single_frame(rng):
    stack = crandn(rng, 1, 1, 4)
    R, _ = compute_correlations(stack, crandn(rng, 1, 1, 1), np.ones((1, 1)))
    np.testing.assert_allclose(R[0], np.outer(stack[0, 0], stack[0, 0].conj()), rtol=1e-14)
    assert np.linalg.matrix_rank(R[0]) == 1


def test_correlations_match_naive(rng, backend):
    X = crandn(rng, 10, 2, 2)
    stack = build_delayed_stack(X, 1, 2)
    lam = rng.uniform(0.5, 2.0, (10, 2))
    R, P = compute_correlations(stack, X, lam, backend)
    R0, P0 = naive_correlations(stack, X, lam)
    assert rel_err(R, R0) <= 1e-12 and rel_err(P, P0) <= 1e-12
    np.testing.assert_array_equal(R, np.conj(np.swapaxes(R, 1, 2)))


def test_correlations_reject_bad_psd(rng):
    X = crandn(rng, 6, 1, 1)
    stack = build_delayed_stack(X, 1, 1)
    with pytest.raises(ValueError):
        compute_correlations(stack, X, np.zeros((6, 1)))
    with pytest.raises(ValueError):
        compute_correlations(stack, X, np.full((6, 1), np.inf))


# -- solve -------------------------------------------------------------------

def test_zero_cross_correlation_gives_zero_filter(rng, backend):
    R = np.eye(4)[None] * 3.0
    G = solve_filters(R, np.zeros((1, 4, 1)), backend=backend)
    assert not G.coeffs.any()


def test_identity_system_returns_rhs(rng, backend):
    P = crandn(rng, 2, 4, 2)
    G = solve_filters(np.broadcast_to(np.eye(4), (2, 4, 4)), P, diag_load=0.0, backend=backend)
    np.testing.assert_allclose(G.coeffs, P, rtol=1e-14)


def test_solve_matches_explicit_inverse(rng, backend):
    A = crandn(rng, 6, 6)
    R = (A @ A.conj().T + 6 * np.eye(6))[None]
    P = crandn(rng, 1, 6, 2)
    G = solve_filters(R, P, diag_load=0.0, backend=backend, taps=3)
    assert rel_err(G.coeffs[0], np.linalg.inv(R[0]) @ P[0]) <= 1e-10
    assert (G.taps, G.channels) == (3, 2)
    assert filter_residual(R, P, G, 0.0)[0] < 1e-12


def test_loading_ignores_inactive_channels():
    R = np.diag([2.0, 0.0, 4.0, 0.0]).astype(complex)[None]
    assert loading_level(R, 0.1)[0] == pytest.approx(0.1 * 6.0 / 2)


def test_failed_frequency_falls_back_to_zero(caplog, backend):
    R = np.stack([np.eye(2), -np.eye(2)]).astype(complex)
    P = np.ones((2, 2, 1), dtype=complex)
    with caplog.at_level(logging.WARNING):
        G = solve_filters(R, P, diag_load=0.0, backend=backend)
    assert G.failed.tolist() == [False, True]
    assert not G.coeffs[1].any()
    assert "failed" in caplog.text


def test_filter_bank_shape_check():
    with pytest.raises(ValueError):
        LpFilterBank(np.zeros((2, 5, 2)), taps=2, channels=2)


# -- apply -------------------------------------------------------------------

def test_zero_filter_is_identity(rng):
    X = crandn(rng, 7, 3, 2)
    stack = build_delayed_stack(X, 1, 2)
    np.testing.assert_array_equal(apply_filters(X, stack, np.zeros((3, 4, 2))), X)


def test_known_filter_cancels_late_part(rng):
    X, E, G0, _ = constructed_problem(rng, D=2, K=2, delay=4, lam=np.ones((60, 2)))
    stack = build_delayed_stack(X, 4, 2)
    np.testing.assert_allclose(apply_filters(X, stack, G0), E, atol=1e-12)


def test_apply_matches_naive(rng):
    X = crandn(rng, 8, 2, 2)
    stack = build_delayed_stack(X, 1, 3)
    G = crandn(rng, 2, 6, 2)
    assert rel_err(apply_filters(X, stack, G), naive_apply(X, stack, G)) <= 1e-12


# -- full estimators ---------------------------------------------------------

def test_uniform_psd_gives_least_squares(rng):
    X = crandn(rng, 60, 2, 2)
    cfg = WpeConfig(taps=3, delay=2, diag_load=0.0)
    _, G = wpe_with_psd(X, np.ones((60, 2)), cfg)
    stack = build_delayed_stack(X, 2, 3)
    for f in range(2):
        sol = np.linalg.lstsq(stack[:, f], X[:, f], rcond=None)[0]
        np.testing.assert_allclose(G.coeffs[f], np.conj(sol), rtol=1e-9, atol=1e-12)


def test_single_pass_equals_first_iteration(rng):
    X = crandn(rng, 40, 3, 2)
    cfg = WpeConfig(taps=2, delay=1, context=1, iterations=1)
    Z1, G1 = wpe_iterative(X, cfg)
    Z2, G2 = wpe_with_psd(X, psd_context_avg(X, 1), cfg)
    np.testing.assert_array_equal(Z1, Z2)
    np.testing.assert_array_equal(G1.coeffs, G2.coeffs)


def test_weighted_normal_equations_oracle(rng):
    T, D, K, delay = 30, 2, 3, 1
    X = crandn(rng, T, 1, D)
    lam = rng.uniform(0.2, 3.0, (T, 1))
    _, G = wpe_with_psd(X, lam, WpeConfig(taps=K, delay=delay, diag_load=0.0))
    stack = build_delayed_stack(X, delay, K)[:, 0]
    W = np.diag(1.0 / lam[:, 0])
    oracle = np.linalg.pinv(stack.T @ W @ stack.conj()) @ (stack.T @ W @ X[:, 0].conj())
    assert rel_err(G.coeffs[0], oracle) <= 1e-8


@pytest.mark.parametrize("D,K,delay", [(1, 1, 1), (1, 3, 3), (2, 2, 4)])
def test_constructed_filter_recovery(rng, D, K, delay):
    lam = None if D == 1 else rng.uniform(0.5, 2.0, (80, 3))
    X, E, G0, lam = constructed_problem(rng, T=80, F=3, D=D, K=K, delay=delay, lam=lam)
    Z, G = wpe_with_psd(X, lam, WpeConfig(taps=K, delay=delay, diag_load=0.0))
    assert rel_err(G.coeffs, G0) <= 1e-9
    assert rel_err(Z, E) <= 1e-9


def test_iterative_preserves_spectrogram_type(rng):
    x = speech_like(1.5, 16000, 3)
    Z, G = wpe_iterative(stft(x), WpeConfig(taps=4))
    assert isinstance(Z, Spectrogram) and Z.num_samples == x.num_samples
    assert G.coeffs.shape == (513, 4, 1)


def test_dry_speech_is_barely_touched():
    x = speech_like(3.0, 16000, 11)
    Z, _ = wpe_iterative(stft(x), WpeConfig(taps=5))
    assert metrics.cepstral_distance(x, istft(Z)) <= 0.5


def test_backends_give_same_output(rng):
    X = crandn(rng, 50, 5, 2)
    cfg = WpeConfig(taps=3, iterations=2)
    Za, _ = wpe_iterative(X, cfg, backend="numpy")
    Zb, _ = wpe_iterative(X, cfg, backend="numba")
    np.testing.assert_allclose(Za, Zb, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(taps=0), dict(delay=0), dict(context=-1), dict(iterations=0),
                                dict(diag_load=-1.0), dict(psd_floor=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        WpeConfig(**kw)


def test_too_short_input(rng):
    with pytest.raises(ValueError):
        wpe_iterative(crandn(rng, 12, 2, 1), WpeConfig(taps=10, delay=3))
    with pytest.raises(ValueError):
        wpe_with_psd(crandn(rng, 30, 2, 1), np.ones((29, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), D=st.integers(1, 2), K=st.integers(1, 3))
def test_solution_minimises_weighted_objective(seed, D, K):
    rng = np.random.default_rng(seed)
    X = crandn(rng, 40, 2, D)
    lam = rng.uniform(0.2, 3.0, (40, 2))
    _, G = wpe_with_psd(X, lam, WpeConfig(taps=K, delay=1, diag_load=0.0))
    stack = build_delayed_stack(X, 1, K)
    best = weighted_objective(X, stack, G, lam)
    for _ in range(3):
        worse = weighted_objective(X, stack, G.coeffs + 1e-3 * crandn(rng, *G.coeffs.shape), lam)
        assert np.all(worse >= best - 1e-9 * np.abs(best))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.integers(0, 4))
def test_psd_is_positive_and_bounded(seed, c):
    Z = crandn(np.random.default_rng(seed), 15, 3, 2)
    lam = psd_context_avg(Z, c)
    power = np.mean(np.abs(Z) ** 2, axis=2)
    assert np.all(lam > 0)
    assert np.all(lam <= power.max(axis=0) + 1e-12)
    assert np.all(lam >= np.minimum(power.min(axis=0), lam.max()) - 1e-12)
