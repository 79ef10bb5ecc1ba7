import math
from unittest import TestCase

import numpy as np

from pnpde.exceptions import (
    InsufficientSmoothnessError,
    UnsupportedSmoothnessError,
)
from pnpde.kernels import (
    MaternHalfInteger,
    RationalQuadratic,
    TensorKernel,
    matern_coeffs,
    tensor_cross_cov,
    univariate_deriv,
)


def central_difference(func, h, eps=1e-5):
    return (func(h + eps) - func(h - eps)) / (2 * eps)


class KernelsTest(TestCase):
    def test_matern_coeffs(self):
        test_pairs = (
            ((0, 1.0, 1.0), [1.0]),
            ((1, 1.0, 2.0), [1.0, 0.5]),
            ((2, 1.0, 1.0), [1.0, 1.0, 1 / 3]),
            ((2, 2.0, 1.0), [4.0, 4.0, 4 / 3]),
        )
        for args, expected in test_pairs:
            print("Testing matern_coeffs%s" % (args,), end=" ")
            np.testing.assert_allclose(matern_coeffs(*args), expected)
            print("✓")

    def test_unsupported_index(self):
        for p in (-1, 4, 1.5):
            with self.assertRaises(UnsupportedSmoothnessError):
                matern_coeffs(p)
        with self.assertRaises(ValueError):
            matern_coeffs(1, rho=0.0)

    def test_top_order_derivative_at_zero(self):
        for p in (1, 2, 3):
            for sigma in (0.5, 1.0, 2.0):
                for rho in (0.5, 1.0, 3.0):
                    print(
                        "Testing K^(2p)(0) for p=%s sigma=%s rho=%s"
                        % (p, sigma, rho),
                        end=" ",
                    )
                    kernel = MaternHalfInteger(p, sigma, rho)
                    expected = (-1) ** p * sigma**2 / rho ** (2 * p)
                    value = kernel.deriv(2 * p, 0.0)
                    self.assertLess(
                        abs(value - expected), 1e-6 * max(1, abs(expected))
                    )
                    print("✓")

    def test_odd_derivatives_vanish_at_zero(self):
        for p in (1, 2, 3):
            kernel = MaternHalfInteger(p, 1.3, 0.7)
            for order in range(1, 2 * p + 1, 2):
                self.assertEqual(kernel.deriv(order, 0.0), 0.0)
        rq = RationalQuadratic()
        for order in (1, 3):
            self.assertEqual(rq.deriv(order, 0.0), 0.0)

    def test_second_derivative_limit(self):
        kernel = MaternHalfInteger(2, 1.0, 2.0)
        self.assertAlmostEqual(kernel.deriv(2, 0.0), -1 / 12)

    def test_parity(self):
        h = np.array([0.3, 1.1, 2.5])
        for kernel in (MaternHalfInteger(3, 1.0, 1.5), RationalQuadratic()):
            for order in range(5):
                sign = (-1) ** order
                np.testing.assert_allclose(
                    kernel.deriv(order, -h), sign * kernel.deriv(order, h)
                )

    def test_derivatives_match_finite_differences(self):
        kernels = (
            MaternHalfInteger(1, 1.0, 2.0),
            MaternHalfInteger(2, 1.5, 0.8),
            MaternHalfInteger(3, 1.0, 1.0),
            RationalQuadratic(2.0, 1.2),
        )
        for kernel in kernels:
            for order in range(kernel.max_order):
                for h in (-1.7, 0.4, 2.3):
                    print(
                        "Testing order %s derivative of %r at %s"
                        % (order + 1, kernel, h),
                        end=" ",
                    )
                    numeric = central_difference(
                        lambda v: univariate_deriv(kernel, order, v), h
                    )
                    self.assertAlmostEqual(
                        univariate_deriv(kernel, order + 1, h),
                        numeric,
                        delta=1e-6 * max(1.0, abs(numeric)),
                    )
                    print("✓")

    def test_rational_quadratic_values(self):
        kernel = RationalQuadratic(sigma=2.0, rho=1.0)
        self.assertEqual(kernel.deriv(0, 0.0), 2.0)
        self.assertAlmostEqual(kernel.deriv(0, 1.0), 1.0)
        self.assertAlmostEqual(kernel.deriv(2, 0.0), -4.0)
        self.assertAlmostEqual(RationalQuadratic().rho, math.sqrt(3))

    def test_order_beyond_smoothness(self):
        with self.assertRaises(InsufficientSmoothnessError):
            MaternHalfInteger(1).deriv(3, 0.5)
        with self.assertRaises(InsufficientSmoothnessError):
            RationalQuadratic().deriv(5, 0.5)
        with self.assertRaises(ValueError):
            MaternHalfInteger(1).deriv(-1, 0.5)

    def test_array_input(self):
        kernel = MaternHalfInteger(2)
        values = kernel.deriv(1, np.array([[0.0, 1.0], [-1.0, 2.0]]))
        self.assertEqual(values.shape, (2, 2))
        self.assertIsInstance(kernel.deriv(0, 0.5), float)

    def test_tensor_budget(self):
        kernel = TensorKernel(
            (MaternHalfInteger(1), MaternHalfInteger(2))
        )
        self.assertEqual(kernel.budget, (1, 2))
        self.assertTrue(kernel.supports((1, 2)))
        self.assertFalse(kernel.supports((2, 0)))
        self.assertEqual(
            TensorKernel((RationalQuadratic(), RationalQuadratic())).budget,
            (2, 2),
        )

    def test_tensor_cross_cov_finite_differences(self):
        kernel = TensorKernel(
            (MaternHalfInteger(1, 1.0, 1.0), MaternHalfInteger(2, 1.0, 1.0))
        )
        r, s = (0.3, 0.4), (0.9, 0.1)
        eps = 1e-5

        def base(r_point, s_point):
            return tensor_cross_cov(kernel, (0, 0), (0, 0), r_point, s_point)

        print("Testing d/dx of the left argument", end=" ")
        numeric = (
            base((r[0], r[1] + eps), s) - base((r[0], r[1] - eps), s)
        ) / (2 * eps)
        self.assertAlmostEqual(
            tensor_cross_cov(kernel, (0, 1), (0, 0), r, s), numeric, places=8
        )
        print("✓")

        print("Testing d/dt of the right argument", end=" ")
        numeric = (
            base(r, (s[0] + eps, s[1])) - base(r, (s[0] - eps, s[1]))
        ) / (2 * eps)
        self.assertAlmostEqual(
            tensor_cross_cov(kernel, (0, 0), (1, 0), r, s), numeric, places=8
        )
        print("✓")

    def test_tensor_cross_cov_symmetry(self):
        kernel = TensorKernel((MaternHalfInteger(1), MaternHalfInteger(2)))
        r, s = (0.2, 1.3), (0.7, -0.4)
        for left, right in (((1, 0), (0, 1)), ((0, 2), (1, 1))):
            self.assertAlmostEqual(
                kernel.cross_cov(left, right, r, s),
                kernel.cross_cov(right, left, s, r),
            )

    def test_tensor_cross_cov_shape_check(self):
        kernel = TensorKernel((MaternHalfInteger(1), MaternHalfInteger(2)))
        with self.assertRaises(ValueError):
            kernel.cross_cov((0,), (0, 0), (0.0, 0.0), (1.0, 1.0))
        with self.assertRaises(ValueError):
            TensorKernel(())

    def test_gram_is_positive_semidefinite(self):
        rng = np.random.default_rng(11)
        t, x = rng.uniform(0, 3, 20), rng.uniform(0, 3, 20)
        test_kernels = (
            TensorKernel((MaternHalfInteger(1), MaternHalfInteger(2))),
            TensorKernel(
                (MaternHalfInteger(0, 1.5, 0.7), MaternHalfInteger(3))
            ),
            TensorKernel((RationalQuadratic(), RationalQuadratic(2.0, 0.5))),
        )
        for kernel in test_kernels:
            print("Testing Gram eigenvalues of %r" % (kernel,), end=" ")
            gram = tensor_cross_cov(
                kernel,
                (0, 0),
                (0, 0),
                (t[:, None], x[:, None]),
                (t[None, :], x[None, :]),
            )
            trace = float(np.trace(gram))
            self.assertGreaterEqual(
                np.min(np.linalg.eigvalsh(gram)), -1e-10 * trace
            )
            print("✓")

    def test_amplitude_homogeneity(self):
        rng = np.random.default_rng(5)
        r = (rng.uniform(0, 2, 8), rng.uniform(0, 2, 8))
        s = (rng.uniform(0, 2, 8), rng.uniform(0, 2, 8))
        base = TensorKernel((MaternHalfInteger(1), MaternHalfInteger(2)))
        for sigma in (2.0, 0.5, 3.0):
            print("Testing amplitude sigma=%s" % sigma, end=" ")
            scaled = TensorKernel(
                (MaternHalfInteger(1), MaternHalfInteger(2, sigma))
            )
            for left in ((0, 0), (1, 0), (0, 1), (1, 2)):
                for right in ((0, 0), (0, 2), (1, 1)):
                    np.testing.assert_allclose(
                        tensor_cross_cov(scaled, left, right, r, s),
                        sigma**2 * tensor_cross_cov(base, left, right, r, s),
                        rtol=1e-12,
                        atol=1e-14,
                    )
            print("✓")
        linear = RationalQuadratic(3.0).deriv(2, np.linspace(-1, 1, 5))
        np.testing.assert_allclose(
            linear, 3.0 * RationalQuadratic().deriv(2, np.linspace(-1, 1, 5))
        )
