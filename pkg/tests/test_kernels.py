"""Kernel construction and smoothing tests.

Every expected value asserted here is either computed by the brute-force
reference implementations below (`ref_smooth`, `ref_smooth_discounted`) or
frozen from a direct evaluation of the defining formula.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smrl.errors import InvalidParameterError
from smrl.kernels import (
    Kernel,
    RewardSequence,
    ema_stream,
    make_ema_kernel,
    make_gaussian_kernel,
    make_uniform_kernel,
    smooth,
    smooth_discounted,
)


def ref_smooth(r, kernel):
    """Literal double loop over the defining sum, kept independent of smooth()."""
    r = np.asarray(r, dtype=float)
    T = r.size - 1
    L = kernel.half_width
    out = np.zeros(T + 1)
    for t in range(T + 1):
        for i in range(-L, L + 1):
            out[t] += kernel.weight(i) * r[min(max(t + i, 0), T)]
    return out


def ref_smooth_discounted(r, gamma, kernel):
    r = np.asarray(r, dtype=float)
    T = r.size - 1
    L = kernel.half_width
    out = np.zeros(T + 1)
    for t in range(T + 1):
        for i in range(-L, L + 1):
            expo = min(max(i, -t), T - t)
            out[t] += gamma**expo * kernel.weight(i) * r[min(max(t + i, 0), T)]
    return out


def interior_sequence(rng, length=64, half_gap=12, scale=1.0):
    """Random sequence whose nonzero entries stay half_gap away from both ends."""
    r = np.zeros(length)
    r[half_gap: length - half_gap] = rng.standard_normal(length - 2 * half_gap) * scale
    return r


class TestConstructors:
    def test_gaussian_sigma3_table_default(self):
        k = make_gaussian_kernel(3.0, 12)
        assert k.half_width == 12
        assert abs(k.weights.sum() - 1.0) < 1e-12
        assert k.weight(0) == max(k.weights)
        for i in range(1, 13):
            assert k.weight(i) == k.weight(-i)

    def test_gaussian_default_half_width_is_4_sigma(self):
        assert make_gaussian_kernel(3.0).half_width == 12
        assert make_gaussian_kernel(2.0).half_width == 8
        assert make_gaussian_kernel(0.5).half_width == 2

    def test_gaussian_degenerate_sigma_is_delta_kernel(self):
        k = make_gaussian_kernel(1e-6, 4)
        expect = np.array([0, 0, 0, 0, 1, 0, 0, 0, 0], dtype=float)
        np.testing.assert_allclose(k.weights, expect, atol=1e-300)

    def test_gaussian_sigma1_L3_direct_formula(self):
        # frozen from w_i = exp(-i^2/2) / sum_j exp(-j^2/2)
        k = make_gaussian_kernel(1.0, 3)
        expect = np.array(
            [
                0.004433048175243745,
                0.054005582622414484,
                0.2420362293761143,
                0.3990502796524549,
                0.2420362293761143,
                0.054005582622414484,
                0.004433048175243745,
            ]
        )
        np.testing.assert_allclose(k.weights, expect, rtol=0, atol=1e-15)

    def test_gaussian_rejects_bad_sigma(self):
        with pytest.raises(InvalidParameterError):
            make_gaussian_kernel(0.0)
        with pytest.raises(InvalidParameterError):
            make_gaussian_kernel(-1.0)

    def test_uniform_delta9(self):
        k = make_uniform_kernel(9)
        assert k.half_width == 4
        np.testing.assert_array_equal(k.weights, np.full(9, 1.0 / 9.0))

    def test_uniform_delta1_identity(self):
        k = make_uniform_kernel(1)
        assert k.half_width == 0
        np.testing.assert_array_equal(k.weights, [1.0])

    def test_uniform_rejects_even_or_nonpositive(self):
        for delta in (0, -3, 2, 8):
            with pytest.raises(InvalidParameterError):
                make_uniform_kernel(delta)

    def test_ema_alpha0_identity(self):
        k = make_ema_kernel(0.0, 3)
        assert k.weight(0) == 1.0
        assert k.weights.sum() == 1.0
        assert k.is_causal

    def test_ema_half_alpha_tail_absorption(self):
        # raw geometric (1-a)a^k = [0.5, 0.25], tail mass 0.25 folded into i=-2
        k = make_ema_kernel(0.5, 2)
        assert k.weight(0) == 0.5
        assert k.weight(-1) == 0.25
        assert k.weight(-2) == 0.25
        assert k.weight(1) == 0.0 and k.weight(2) == 0.0

    def test_ema_table_alpha_normalized(self):
        k = make_ema_kernel(0.3, 20)
        assert abs(k.weights.sum() - 1.0) < 1e-12

    def test_ema_rejects_bad_alpha(self):
        for alpha in (-0.1, 1.0, 1.5):
            with pytest.raises(InvalidParameterError):
                make_ema_kernel(alpha)

    def test_causality_flags(self):
        assert make_ema_kernel(0.4, 5).is_causal
        assert make_uniform_kernel(1).is_causal
        assert not make_gaussian_kernel(1.0).is_causal
        assert not make_uniform_kernel(5).is_causal

    def test_kernel_rejects_unnormalized_weights(self):
        with pytest.raises(InvalidParameterError):
            Kernel("uniform", 1, np.array([0.3, 0.3, 0.3]))
        with pytest.raises(InvalidParameterError):
            Kernel("uniform", 1, np.array([-0.5, 1.0, 0.5]))


# the paper's Table-1 values plus extremes; reused by the acceptance suite
NORMALIZATION_GRID = {
    "sigma": [0.5, 1, 2, 3, 5],
    "delta": [1, 3, 5, 9, 15],
    "alpha": [0, 0.3, 0.33, 0.45, 0.5],
}


def test_normalization_grid():
    for sigma in NORMALIZATION_GRID["sigma"]:
        assert abs(make_gaussian_kernel(sigma).weights.sum() - 1.0) < 1e-12
    for delta in NORMALIZATION_GRID["delta"]:
        assert abs(make_uniform_kernel(delta).weights.sum() - 1.0) < 1e-12
    for alpha in NORMALIZATION_GRID["alpha"]:
        assert abs(make_ema_kernel(alpha).weights.sum() - 1.0) < 1e-12


class TestSmooth:
    def test_all_zero_input(self):
        seq = RewardSequence(np.zeros(20))
        for k in (make_gaussian_kernel(2.0), make_uniform_kernel(5), make_ema_kernel(0.3)):
            np.testing.assert_array_equal(smooth(seq, k), np.zeros(20))

    def test_uniform3_spreads_single_spike(self):
        r = np.zeros(9)
        r[4] = 1.0
        out = smooth(RewardSequence(r), make_uniform_kernel(3))
        expect = np.zeros(9)
        expect[3:6] = 1.0 / 3.0
        np.testing.assert_allclose(out, expect, atol=1e-15)

    def test_gaussian_bump_shape_at_t4(self):
        r = np.zeros(9)
        r[4] = 1.0
        out = smooth(RewardSequence(r), make_gaussian_kernel(1.0))  # L = 4
        # frozen by direct evaluation of exp(-i^2/2) / sum
        expect = np.array(
            [
                0.00013383062461474175,
                0.0044318616200312655,
                0.05399112742070441,
                0.24197144565660073,
                0.39894346935609776,
                0.24197144565660073,
                0.05399112742070441,
                0.0044318616200312655,
                0.00013383062461474175,
            ]
        )
        np.testing.assert_allclose(out, expect, atol=1e-15)
        assert np.argmax(out) == 4
        assert np.all(np.diff(out[:5]) > 0) and np.all(np.diff(out[4:]) < 0)

    def test_matches_bruteforce_with_boundary_clipping(self):
        rng = np.random.default_rng(0)
        r = rng.standard_normal(30)
        for k in (make_gaussian_kernel(2.0), make_uniform_kernel(7), make_ema_kernel(0.4, 6)):
            np.testing.assert_allclose(
                smooth(RewardSequence(r), k), ref_smooth(r, k), rtol=1e-12, atol=1e-12
            )

    def test_matches_scipy_nearest_mode(self):
        scipy_ndimage = pytest.importorskip("scipy.ndimage")
        rng = np.random.default_rng(1)
        r = rng.standard_normal(50)
        sigma = 2.0
        ours = smooth(RewardSequence(r), make_gaussian_kernel(sigma, 8))
        theirs = scipy_ndimage.gaussian_filter1d(
            r, sigma, mode="nearest", truncate=8.0 / sigma
        )
        np.testing.assert_allclose(ours, theirs, rtol=1e-10, atol=1e-12)

    def test_interior_sum_preservation(self):
        rng = np.random.default_rng(2)
        r = interior_sequence(rng, 64, 12)
        for k in (make_gaussian_kernel(3.0, 12), make_uniform_kernel(5), make_ema_kernel(0.5, 12)):
            out = smooth(RewardSequence(r), k)
            assert abs(out.sum() - r.sum()) <= 1e-9 * max(1.0, abs(r.sum()))

    def test_identity_kernels_are_exact(self):
        rng = np.random.default_rng(3)
        r = rng.standard_normal(40)
        seq = RewardSequence(r)
        np.testing.assert_array_equal(smooth(seq, make_uniform_kernel(1)), r)
        out = smooth(seq, make_ema_kernel(0.0, 4))
        np.testing.assert_allclose(out, r, rtol=0, atol=1e-15)

    @given(
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        r1 = rng.standard_normal(24)
        r2 = rng.standard_normal(24)
        k = make_gaussian_kernel(1.5, 4)
        lhs = smooth(RewardSequence(a * r1 + b * r2), k)
        rhs = a * smooth(RewardSequence(r1), k) + b * smooth(RewardSequence(r2), k)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestSmoothDiscounted:
    def test_gamma1_equals_plain_smooth(self):
        rng = np.random.default_rng(4)
        r = rng.standard_normal(32)
        k = make_gaussian_kernel(2.0)
        np.testing.assert_array_equal(
            smooth_discounted(RewardSequence(r, 1.0), k), smooth(RewardSequence(r), k)
        )

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        r = rng.standard_normal(25)
        for gamma in (0.9, 0.99):
            for k in (make_gaussian_kernel(1.0, 3), make_ema_kernel(0.3, 5)):
                seq = RewardSequence(r, gamma)
                np.testing.assert_allclose(
                    smooth_discounted(seq, k),
                    ref_smooth_discounted(r, gamma, k),
                    rtol=1e-12,
                    atol=1e-12,
                )

    def test_interior_discounted_sum_invariance(self):
        rng = np.random.default_rng(6)
        r = interior_sequence(rng, 64, 12)
        t = np.arange(r.size)
        for gamma in (0.9, 0.99, 1.0):
            disc = gamma**t
            for k in (make_gaussian_kernel(3.0, 12), make_uniform_kernel(9), make_ema_kernel(0.3, 12)):
                out = smooth_discounted(RewardSequence(r, gamma), k)
                lhs = float(disc @ out)
                rhs = float(disc @ r)
                assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))

    def test_boundary_reward_breaks_invariance(self):
        # reward at t=0 gets its clipped mass replicated; the discounted sums
        # then genuinely differ — measured, not asserted equal.
        r = np.zeros(9)
        r[0] = 1.0
        gamma = 0.9
        out = smooth_discounted(RewardSequence(r, gamma), make_gaussian_kernel(1.0, 4))
        t = np.arange(9)
        lhs = float((gamma**t) @ out)
        rhs = float((gamma**t) @ r)
        rel = abs(lhs - rhs) / abs(rhs)
        assert rel > 1e-3
        # frozen magnitude from the brute-force evaluation of both sums
        assert rel == pytest.approx(0.0632563425346111, rel=1e-9)

    def test_gamma0_rejected_for_wide_kernels(self):
        with pytest.raises(InvalidParameterError):
            smooth_discounted(RewardSequence(np.ones(5), 0.0), make_gaussian_kernel(1.0, 2))


class TestEmaStream:
    def test_alpha0_identity(self):
        rng = np.random.default_rng(7)
        r = rng.standard_normal(12)
        np.testing.assert_array_equal(ema_stream(RewardSequence(r), 0.0), r)

    def test_hand_unrolled_recurrence(self):
        out = ema_stream(RewardSequence(np.array([0.0, 0, 1, 0, 0])), 0.5)
        np.testing.assert_allclose(out, [0.0, 0.0, 0.5, 0.25, 0.125], atol=1e-15)

    def test_nonnegative_input_leaks_tail_mass(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            r = rng.random(30)
            out = ema_stream(RewardSequence(r), 0.45)
            assert out.sum() <= r.sum() + 1e-12

    def test_stream_equals_kernel_form_with_zero_first_reward(self):
        # r_0 = 0 makes edge replication and the zero history prefix coincide,
        # so the truncated kernel (L=60, tail absorbed) reproduces the stream.
        rng = np.random.default_rng(9)
        r = rng.standard_normal(60)
        r[0] = 0.0
        seq = RewardSequence(r)
        for alpha in (0.2, 0.5):
            out_stream = ema_stream(seq, alpha)
            out_kernel = smooth(seq, make_ema_kernel(alpha, 60))
            np.testing.assert_allclose(out_stream, out_kernel, atol=1e-9)


def _timed_smooth(T, L, repeats=3):
    rng = np.random.default_rng(123)
    r = rng.standard_normal(T)
    seq = RewardSequence(r)
    k = make_gaussian_kernel(L / 4.0, L)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        smooth(seq, k)
        best = min(best, time.perf_counter() - t0)
    return best


def test_smooth_runtime_scales_linearly_in_T():
    # large L keeps the kernel loop compute-bound, so the wall-time ratio
    # tracks the O(T·L) operation count rather than cache behaviour
    L = 256
    _timed_smooth(2**14, L)  # warm caches
    t14 = _timed_smooth(2**14, L, repeats=9)
    t15 = _timed_smooth(2**15, L, repeats=9)
    t16 = _timed_smooth(2**16, L, repeats=9)
    for ratio in (t15 / t14, t16 / t15):
        assert 1.4 < ratio < 2.6, f"doubling-T ratio {ratio:.2f} outside +-30% of 2"
