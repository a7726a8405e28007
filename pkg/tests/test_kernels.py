import math

import numpy as np
import pytest

from dumbo.errors import ArityMismatch
from dumbo.kernels import (
    MATERN52,
    SQUARED_EXPONENTIAL,
    cross_covariance,
    cross_covariance_and_gradients,
    gram,
    kernel_eval,
    kernel_gradient,
    kernel_lipschitz,
    make_kernel,
)


def finite_difference_gradient(kernel, x, x2, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        hi = x.copy(); hi[j] += h
        lo = x.copy(); lo[j] -= h
        g[j] = (kernel_eval(kernel, hi, x2) - kernel_eval(kernel, lo, x2)) / (2 * h)
    return g


class TestKernelEval:
    def test_se_zero_lag(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 1.0, 1.0, arity=1)
        assert kernel_eval(k, [0.3], [0.3]) == pytest.approx(1.0)

    def test_se_unit_lag(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 1.0, 1.0, arity=1)
        assert kernel_eval(k, [1.0], [0.0]) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_matern_zero_lag(self):
        k = make_kernel(MATERN52, 1.0, 1.0, arity=1)
        assert kernel_eval(k, [2.0], [2.0]) == pytest.approx(1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for family in (SQUARED_EXPONENTIAL, MATERN52):
            k = make_kernel(family, [0.7, 1.3], 2.0)
            a, b = rng.normal(size=2), rng.normal(size=2)
            assert kernel_eval(k, a, b) == pytest.approx(kernel_eval(k, b, a))

    def test_arity_mismatch(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 1.0, 1.0, arity=2)
        with pytest.raises(ArityMismatch):
            kernel_eval(k, [0.0], [0.0])

    def test_psd_gram(self):
        rng = np.random.default_rng(1)
        for family in (SQUARED_EXPONENTIAL, MATERN52):
            k = make_kernel(family, [0.5, 2.0, 1.0], 1.5)
            pts = rng.uniform(-3, 3, size=(20, 3))
            eigs = np.linalg.eigvalsh(gram(k, pts))
            assert eigs.min() >= -1e-8


class TestKernelGradient:
    def test_zero_lag_gradient(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 0.8, 1.7, arity=3)
        assert np.allclose(kernel_gradient(k, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0)

    def test_se_hand_value(self):
        # d/dx of exp(-x^2/2) at x=1 is -exp(-1/2)
        k = make_kernel(SQUARED_EXPONENTIAL, 1.0, 1.0, arity=1)
        g = kernel_gradient(k, [1.0], [0.0])
        assert g[0] == pytest.approx(-math.exp(-0.5), abs=1e-12)

    @pytest.mark.parametrize("family", [SQUARED_EXPONENTIAL, MATERN52])
    def test_finite_difference_agreement(self, family):
        rng = np.random.default_rng(42)
        k = make_kernel(family, [0.6, 1.4], 1.3)
        worst = 0.0
        for _ in range(100):
            x = rng.normal(size=2, scale=2)
            x2 = rng.normal(size=2, scale=2)
            g = kernel_gradient(k, x, x2)
            fd = finite_difference_gradient(k, x, x2)
            scale = max(np.linalg.norm(fd), 1e-8)
            worst = max(worst, np.linalg.norm(g - fd) / scale)
        assert worst < 1e-6

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        k = make_kernel(MATERN52, [0.9, 1.1], 0.7)
        xs = rng.normal(size=(4, 2))
        base = rng.normal(size=(6, 2))
        kv, grads = cross_covariance_and_gradients(k, xs, base)
        assert np.allclose(kv, cross_covariance(k, xs, base))
        for i in range(4):
            for j in range(6):
                assert np.allclose(grads[i, j], kernel_gradient(k, xs[i], base[j]))


class TestKernelLipschitz:
    def test_se_unit(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 1.0, 1.0, arity=1)
        assert kernel_lipschitz(k) == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_se_lengthscale_two(self):
        k = make_kernel(SQUARED_EXPONENTIAL, 2.0, 1.0, arity=1)
        assert kernel_lipschitz(k) == pytest.approx(math.exp(-0.5) / 2, abs=1e-9)

    def test_scales_with_signal_variance(self):
        base = make_kernel(SQUARED_EXPONENTIAL, 1.3, 1.0, arity=1)
        scaled = make_kernel(SQUARED_EXPONENTIAL, 1.3, 3.5, arity=1)
        assert kernel_lipschitz(scaled) == pytest.approx(3.5 * kernel_lipschitz(base))
        m_base = make_kernel(MATERN52, 1.3, 1.0, arity=1)
        m_scaled = make_kernel(MATERN52, 1.3, 3.5, arity=1)
        assert kernel_lipschitz(m_scaled) == pytest.approx(3.5 * kernel_lipschitz(m_base))

    @pytest.mark.parametrize("family", [SQUARED_EXPONENTIAL, MATERN52])
    def test_empirical_ratio_never_exceeds(self, family):
        # independent vectorized kernel formula as the sampling oracle
        rng = np.random.default_rng(11)
        ls = np.array([0.8, 1.6])
        sv = 1.2
        k = make_kernel(family, ls, sv)
        bound = kernel_lipschitz(k)

        def kf(a, b):
            r2 = np.sum(((a - b) / ls) ** 2, axis=1)
            if family == SQUARED_EXPONENTIAL:
                return sv * np.exp(-0.5 * r2)
            r = np.sqrt(r2)
            s5 = math.sqrt(5.0)
            return sv * (1 + s5 * r + 5 * r2 / 3) * np.exp(-s5 * r)

        xs = rng.uniform(-4, 4, size=(10_000, 2))
        ys = rng.uniform(-4, 4, size=(10_000, 2))
        refs = rng.uniform(-4, 4, size=(10_000, 2))
        num = np.abs(kf(xs, refs) - kf(ys, refs))
        den = np.linalg.norm(xs - ys, axis=1)
        keep = den > 1e-12
        worst = np.max(num[keep] / den[keep])
        assert worst <= bound + 1e-9
