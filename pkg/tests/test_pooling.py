import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopcl import pooling
from hopcl.errors import ConfigError, EmptySequenceError
from hopcl.pooling import PoolingSpec
from hopcl.tensor import make_rng


def naive_central_moments(h, order):
    """Brute-force float64 oracle: explicit loops, no shared code paths."""
    length, q = h.shape
    out = np.zeros(order * q, dtype=np.float64)
    for c in range(q):
        mean = 0.0
        for d in range(length):
            mean += float(h[d, c])
        mean /= length
        out[c] = mean
        for k in range(2, order + 1):
            acc = 0.0
            for d in range(length):
                acc += (float(h[d, c]) - mean) ** k
            out[(k - 1) * q + c] = acc / length
    return out


class TestCentralMoments:
    def test_constant_sequence(self):
        h = np.full((4, 3), 2.5, dtype=np.float32)
        out = pooling.central_moments(h, 3)
        np.testing.assert_allclose(out[:3], 2.5)
        np.testing.assert_allclose(out[3:], 0.0, atol=1e-7)

    def test_three_tokens(self):
        h = np.array([[1.0], [2.0], [3.0]], dtype=np.float64)
        out = pooling.central_moments(h, 3)
        np.testing.assert_allclose(out, [2.0, 2.0 / 3.0, 0.0], atol=1e-12)

    def test_spike_tokens(self):
        h = np.array([[0.0], [0.0], [0.0], [4.0]], dtype=np.float64)
        np.testing.assert_allclose(pooling.central_moments(h, 2), [1.0, 3.0], atol=1e-12)

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            pooling.central_moments(np.zeros((0, 3), np.float32), 2)

    def test_oracle_equivalence_float64(self):
        rng = make_rng(100)
        for _ in range(200):
            length = int(rng.integers(1, 17))
            q = int(rng.integers(1, 9))
            order = int(rng.integers(1, 5))
            h = rng.standard_normal((length, q)) * rng.uniform(0.1, 3.0)
            np.testing.assert_allclose(
                pooling.central_moments(h, order),
                naive_central_moments(h, order),
                atol=1e-10,
            )

    def test_oracle_equivalence_float32(self):
        rng = make_rng(101)
        for _ in range(200):
            length = int(rng.integers(1, 17))
            q = int(rng.integers(1, 9))
            order = int(rng.integers(1, 5))
            h = (rng.standard_normal((length, q)) * rng.uniform(0.1, 3.0)).astype(np.float32)
            np.testing.assert_allclose(
                pooling.central_moments(h, order),
                naive_central_moments(h, order),
                atol=1e-5,
            )

    @given(st.integers(1, 12), st.integers(1, 5), st.floats(-3, 3), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_shift_moves_only_the_mean(self, length, q, shift, seed):
        h = make_rng(seed).standard_normal((length, q))
        base = pooling.central_moments(h, 3)
        shifted = pooling.central_moments(h + shift, 3)
        np.testing.assert_allclose(shifted[:q], base[:q] + shift, atol=1e-10)
        np.testing.assert_allclose(shifted[q:], base[q:], atol=1e-10)

    @given(st.integers(2, 12), st.floats(0.1, 4.0), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_scale_raises_moment_order(self, length, scale, seed):
        h = make_rng(seed).standard_normal((length, 2))
        base = pooling.central_moments(h, 4)
        scaled = pooling.central_moments(h * scale, 4)
        for k in range(1, 5):
            blk = slice((k - 1) * 2, k * 2)
            np.testing.assert_allclose(scaled[blk], base[blk] * scale**k, rtol=1e-8, atol=1e-12)

    def test_permutation_invariance(self):
        rng = make_rng(55)
        h = rng.standard_normal((9, 4))
        perm = np.roll(np.arange(9), 1)  # guaranteed to move token 0
        for kind, order in [("MOMENTS", 4), ("AVG", 1), ("MAX", 1), ("STDDEV", 1)]:
            spec = PoolingSpec(kind, order)
            a, _ = pooling.pool_forward(spec, h[None])
            b, _ = pooling.pool_forward(spec, h[perm][None])
            np.testing.assert_allclose(a, b, atol=1e-12)
        cls_a = pooling.baseline_pool(h, "CLS")
        cls_b = pooling.baseline_pool(h[perm], "CLS")
        assert not np.allclose(cls_a, cls_b)

    def test_width_contract(self):
        h = make_rng(9).standard_normal((5, 6))
        for kind in pooling.POOL_KINDS:
            spec = PoolingSpec(kind, order=3)
            out, _ = pooling.pool_forward(spec, h[None])
            assert out.shape == (1, spec.width(6))


class TestMomentsBackward:
    def test_order_one_is_mean_gradient(self):
        h = make_rng(1).standard_normal((6, 3))
        g = np.array([1.0, -2.0, 0.5])
        grad = pooling.central_moments_backward(h, 1, g)
        np.testing.assert_allclose(grad, np.tile(g / 6, (6, 1)), atol=1e-12)

    def test_constant_sequence_variance_grad_zero(self):
        h = np.full((5, 2), 3.0)
        g = np.array([0.0, 0.0, 1.0, 1.0])
        grad = pooling.central_moments_backward(h, 2, g)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_finite_difference_oracle(self):
        rng = make_rng(77)
        h = rng.standard_normal((5, 3))
        g = rng.standard_normal(9)
        grad = pooling.central_moments_backward(h, 3, g)
        eps = 1e-6
        for d in range(5):
            for c in range(3):
                hp, hm = h.copy(), h.copy()
                hp[d, c] += eps
                hm[d, c] -= eps
                fd = (
                    float(g @ naive_central_moments(hp, 3))
                    - float(g @ naive_central_moments(hm, 3))
                ) / (2 * eps)
                assert grad[d, c] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestBaselinePools:
    def test_single_token_everything_agrees(self):
        h = np.array([[1.5, -2.0, 0.0]], dtype=np.float32)
        for kind in ("CLS", "AVG", "MAX"):
            np.testing.assert_allclose(pooling.baseline_pool(h, kind), h[0], atol=1e-7)

    def test_avgmax(self):
        h = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(pooling.baseline_pool(h, "AVGMAX"), [2.0, 3.0], atol=1e-12)

    def test_stddev(self):
        h = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(
            pooling.baseline_pool(h, "STDDEV"), [np.sqrt(2.0 / 3.0 + 1e-8)], atol=1e-12
        )

    def test_empty(self):
        with pytest.raises(EmptySequenceError):
            pooling.baseline_pool(np.zeros((0, 2)), "AVG")


class TestMomentsWithCls:
    def test_constant_sequence(self):
        h = np.full((4, 2), 1.25)
        out = pooling.moments_with_cls(h, 3)
        np.testing.assert_allclose(out[:2], 1.25)
        np.testing.assert_allclose(out[2:], 0.0, atol=1e-12)

    def test_hand_example(self):
        h = np.array([[5.0], [2.0], [3.0]])
        out = pooling.moments_with_cls(h, 2)
        np.testing.assert_allclose(out, [5.0, 14.0 / 9.0], atol=1e-10)

    def test_order_one_rejected(self):
        with pytest.raises(ConfigError):
            pooling.moments_with_cls(np.ones((2, 2)), 1)
        with pytest.raises(ConfigError):
            PoolingSpec("MOMENTS_CLS", order=1)


def _numeric_pool_grad(spec, x, g, eps=1e-6):
    grad = np.zeros_like(x)
    for b in range(x.shape[0]):
        for d in range(x.shape[1]):
            for c in range(x.shape[2]):
                xp, xm = x.copy(), x.copy()
                xp[b, d, c] += eps
                xm[b, d, c] -= eps
                fp, _ = pooling.pool_forward(spec, xp)
                fm, _ = pooling.pool_forward(spec, xm)
                grad[b, d, c] = float((g * (fp - fm)).sum()) / (2 * eps)
    return grad


@pytest.mark.parametrize("kind,order", [
    ("CLS", 1), ("AVG", 1), ("AVGMAX", 1), ("STDDEV", 1),
    ("MOMENTS", 1), ("MOMENTS", 3), ("MOMENTS", 4), ("MOMENTS_CLS", 3),
])
def test_pool_backward_matches_finite_differences(kind, order):
    rng = make_rng(200 + order)
    spec = PoolingSpec(kind, order)
    x = rng.standard_normal((2, 6, 3))
    g = rng.standard_normal((2, spec.width(3)))
    out, cache = pooling.pool_forward(spec, x)
    grad = pooling.pool_backward(spec, cache, g)
    num = _numeric_pool_grad(spec, x, g)
    np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-7)


def test_max_backward_first_index_tie_break():
    x = np.array([[[1.0], [3.0], [3.0]]])
    spec = PoolingSpec("MAX")
    _, cache = pooling.pool_forward(spec, x)
    grad = pooling.pool_backward(spec, cache, np.array([[2.0]]))
    np.testing.assert_array_equal(grad[0, :, 0], [0.0, 2.0, 0.0])
