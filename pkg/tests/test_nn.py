import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haludet import nn
from haludet.nn import (Rng, bce_grad, bce_with_logits, conv1d, conv1d_backward,
                        derive_seed, kaiming_uniform, linear, linear_backward,
                        masked_mean_pool, masked_mean_pool_backward, relu,
                        relu_backward, sigmoid, softmax)


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(123).u64(500), Rng(123).u64(500))

    def test_chunking_does_not_change_stream(self):
        r = Rng(9)
        whole = Rng(9).u64(200)
        parts = np.concatenate([r.u64(3), r.u64(64), r.u64(1), r.u64(132)])
        assert np.array_equal(whole, parts)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).u64(64), Rng(2).u64(64))

    def test_stream_frozen(self):
        # first outputs of the documented generator, cross-checked against an
        # independent scalar splitmix64 + xoshiro256** implementation; locks
        # the stream down so the algorithm cannot drift silently
        assert [int(v) for v in Rng(0).u64(3)] == [
            11091344671253066420, 7312324333308842969, 12853364369916336745]
        assert [int(v) for v in Rng(12345).u64(3)] == [
            13720838825685603483, 5884089351673155087, 17086932561577718531]

    def test_stream_matches_scalar_reference(self):
        mask = (1 << 64) - 1

        def splitmix(seed, n):
            out, s = [], seed
            for _ in range(n):
                s = (s + 0x9E3779B97F4A7C15) & mask
                z = s
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
                out.append((z ^ (z >> 31)) & mask)
            return out

        def rotl(x, k):
            return ((x << k) | (x >> (64 - k))) & mask

        def xoshiro_step(s):
            res = (rotl((s[1] * 5) & mask, 7) * 9) & mask
            t = (s[1] << 17) & mask
            s[2] ^= s[0]
            s[3] ^= s[1]
            s[1] ^= s[2]
            s[0] ^= s[3]
            s[2] ^= t
            s[3] = rotl(s[3], 45)
            return res

        seed = 987654321
        raw = splitmix(seed, 4 * Rng.LANES)
        lanes = [list(raw[4 * j:4 * j + 4]) for j in range(Rng.LANES)]
        ref = []
        for _ in range(3):  # three interleaved rounds
            ref += [xoshiro_step(lane) for lane in lanes]
        assert [int(v) for v in Rng(seed).u64(3 * Rng.LANES)] == ref

    def test_uniform_in_unit_interval(self):
        u = Rng(5).uniform(20000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.02

    def test_normal_moments(self):
        z = Rng(6).normal(60001)
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02

    @given(st.integers(0, 2 ** 64 - 1), st.integers(2, 40))
    @settings(max_examples=25, deadline=None)
    def test_permutation_is_permutation(self, seed, n):
        perm = Rng(seed).permutation(n)
        assert sorted(perm) == list(range(n))

    def test_randint_bounds(self):
        r = Rng(7)
        draws = [r.randint(13) for _ in range(2000)]
        assert min(draws) == 0 and max(draws) == 12

    def test_derive_seed_spreads(self):
        seeds = {derive_seed(42, k) for k in range(100)}
        assert len(seeds) == 100


class TestLinear:
    def test_identity(self):
        x = np.arange(6, dtype=np.float32).reshape(2, 3)
        assert np.array_equal(linear(x, np.eye(3, dtype=np.float32), np.zeros(3, np.float32)), x)

    def test_zero_input_gives_bias(self):
        b = np.array([1.0, -2.0], np.float32)
        y = linear(np.zeros((4, 3), np.float32), np.ones((2, 3), np.float32), b)
        assert np.array_equal(y, np.tile(b, (4, 1)))

    def test_matches_triple_loop_oracle(self):
        rng = Rng(10)
        x = rng.normal(2 * 3).reshape(2, 3)
        W = rng.normal(4 * 3).reshape(4, 3)
        b = rng.normal(4)
        ref = np.zeros((2, 4))
        for i in range(2):
            for o in range(4):
                for j in range(3):
                    ref[i, o] += W[o, j] * x[i, j]
                ref[i, o] += b[o]
        assert np.abs(linear(x, W, b) - ref).max() < 1e-6

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            linear(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


class TestConv1d:
    def test_identity_kernel(self):
        c = 3
        x = Rng(11).normal(6 * c).reshape(6, c)
        K = np.zeros((c, c, 3))
        for i in range(c):
            K[i, i, 1] = 1.0
        assert np.abs(conv1d(x, K, np.zeros(c)) - x).max() == 0

    def test_zero_input_gives_bias(self):
        b = np.array([0.5, -1.5])
        y = conv1d(np.zeros((4, 2)), np.zeros((2, 2, 3)), b)
        assert np.array_equal(y, np.tile(b, (4, 1)))

    def test_matches_sliding_window_oracle(self):
        rng = Rng(12)
        L, cin, cout = 4, 2, 2
        x = rng.normal(L * cin).reshape(L, cin)
        K = rng.normal(cout * cin * 3).reshape(cout, cin, 3)
        b = rng.normal(cout)
        ref = np.zeros((L, cout))
        for t in range(L):
            for o in range(cout):
                acc = b[o]
                for k in range(3):
                    tt = t + k - 1
                    if 0 <= tt < L:
                        acc += float(K[o, :, k] @ x[tt])
                ref[t, o] = acc
        assert np.abs(conv1d(x, K, b) - ref).max() < 1e-6

    def test_output_length_equals_input_length(self):
        for L in (1, 2, 7, 50):
            y = conv1d(np.ones((L, 2)), np.ones((3, 2, 3)), np.zeros(3))
            assert y.shape == (L, 3)

    def test_wrong_kernel_width_raises(self):
        with pytest.raises(ValueError, match="width"):
            conv1d(np.zeros((4, 2)), np.zeros((2, 2, 5)), np.zeros(2))


class TestElementwise:
    def test_softmax_uniform_over_equal_logits(self):
        y = softmax(np.array([2.0, 2.0, 2.0]))
        assert np.abs(y - 1 / 3).max() < 1e-12

    def test_sigmoid_at_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        y = sigmoid(np.array([-1000.0, 1000.0]))
        assert y[0] >= 0.0 and y[1] <= 1.0 and np.isfinite(y).all()

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=9))
    @settings(max_examples=60, deadline=None)
    def test_softmax_simplex(self, logits):
        y = softmax(np.array(logits))
        assert (y >= 0).all()
        assert abs(y.sum() - 1.0) < 1e-6

    def test_masked_mean(self):
        x = np.array([[1.0, 2.0, 3.0, 0.0, 0.0]]).T[None]
        assert masked_mean_pool(x, np.array([3]))[0, 0] == 2.0

    def test_masked_mean_ignores_padded_garbage(self):
        rng = Rng(13)
        x = rng.normal(10 * 2).reshape(1, 10, 2)
        garbled = x.copy()
        garbled[0, 4:] = 1e6
        lengths = np.array([4])
        assert np.array_equal(masked_mean_pool(x, lengths), masked_mean_pool(garbled, lengths))

    def test_masked_mean_zero_length_rejected(self):
        with pytest.raises(ValueError):
            masked_mean_pool(np.zeros((1, 4, 2)), np.array([0]))


class TestBce:
    def test_zero_logit_is_ln2(self):
        assert abs(bce_with_logits(0.0, 1) - math.log(2)) < 1e-6
        assert abs(bce_with_logits(0.0, 0) - math.log(2)) < 1e-6

    def test_large_negative_logit_stable(self):
        v = bce_with_logits(-100.0, 1)
        assert abs(v - 100.0) < 1e-6 and np.isfinite(v)

    def test_grad_at_zero(self):
        assert abs(bce_grad(np.array([0.0]), np.array([1.0]))[0] + 0.5) < 1e-12

    @given(st.floats(-80, 80), st.integers(0, 1))
    @settings(max_examples=80, deadline=None)
    def test_nonnegative(self, logit, y):
        assert bce_with_logits(logit, y) >= 0.0


def _fd(f, arr, eps=1e-6):
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


class TestLayerGradients:
    def test_linear_backward_vs_fd(self):
        rng = Rng(20)
        x = rng.normal(2 * 3).reshape(2, 3)
        W = rng.normal(4 * 3).reshape(4, 3)
        b = rng.normal(4)
        dy = rng.normal(2 * 4).reshape(2, 4)
        dx, dW, db = linear_backward(dy, x, W)
        loss = lambda: float((linear(x, W, b) * dy).sum())
        assert np.abs(dx - _fd(loss, x)).max() < 1e-6
        assert np.abs(dW - _fd(loss, W)).max() < 1e-6
        assert np.abs(db - _fd(loss, b)).max() < 1e-6

    def test_conv_backward_vs_fd(self):
        rng = Rng(21)
        x = rng.normal(2 * 5 * 3).reshape(2, 5, 3)
        K = rng.normal(4 * 3 * 3).reshape(4, 3, 3)
        b = rng.normal(4)
        dy = rng.normal(2 * 5 * 4).reshape(2, 5, 4)
        dx, dK, db = conv1d_backward(dy, x, K)
        loss = lambda: float((conv1d(x, K, b) * dy).sum())
        assert np.abs(dx - _fd(loss, x)).max() < 1e-5
        assert np.abs(dK - _fd(loss, K)).max() < 1e-5
        assert np.abs(db - _fd(loss, b)).max() < 1e-5

    def test_pool_backward_vs_fd(self):
        rng = Rng(22)
        x = rng.normal(2 * 5 * 3).reshape(2, 5, 3)
        lengths = np.array([2, 5])
        dy = rng.normal(2 * 3).reshape(2, 3)
        dx = masked_mean_pool_backward(dy, x.shape, lengths, x.dtype)
        loss = lambda: float((masked_mean_pool(x, lengths) * dy).sum())
        assert np.abs(dx - _fd(loss, x)).max() < 1e-6

    def test_relu_backward(self):
        x = np.array([-1.0, 0.5, 2.0])
        dy = np.ones(3)
        assert np.array_equal(relu_backward(dy, x), np.array([0.0, 1.0, 1.0]))
        assert np.array_equal(relu(x), np.array([0.0, 0.5, 2.0]))


class TestInit:
    def test_kaiming_std_matches_theory(self):
        # Kaiming-uniform at fan_in=64 has std sqrt(2/64)
        target = math.sqrt(2 / 64)
        stds = [kaiming_uniform((64, 64), 64, Rng(s)).std() for s in range(10)]
        assert abs(np.mean(stds) - target) / target < 0.2

    def test_xavier_bound(self):
        w = nn.xavier_uniform((64, 64), 64, 64, Rng(3))
        bound = math.sqrt(6 / 128)
        assert np.abs(w).max() <= bound
