from unittest import TestCase

import numpy as np

from pnpde.exceptions import InsufficientSmoothnessError
from pnpde.models import DiffTerm
from pnpde.operators import (
    TermTable,
    as_field,
    check_budget,
    cross_cov_diagonal,
    cross_cov_matrix,
    evaluate_functionals,
    functional_cross_cov,
    operator_at,
    point_eval,
    quadrature_functional,
    trapezoid_weights,
    zero_mean,
)
from pnpde.test_factories import random_functional, unit_prior


def polynomial_field(t, x, orders):
    """u = t x^2 with the derivatives the tests use."""
    t, x = np.broadcast_arrays(t, x)
    return {
        (0, 0): t * x**2,
        (1, 0): x**2,
        (0, 1): 2 * t * x,
        (0, 2): 2 * t,
    }[tuple(orders)]


class OperatorsTest(TestCase):
    def test_trapezoid_weights(self):
        np.testing.assert_allclose(
            trapezoid_weights([0.0, 1.0, 2.0]), [0.5, 1.0, 0.5]
        )
        np.testing.assert_allclose(
            trapezoid_weights([0.0, 1.0, 3.0]), [0.5, 1.5, 1.0]
        )
        with self.assertRaises(ValueError):
            trapezoid_weights([0.0])
        with self.assertRaises(ValueError):
            trapezoid_weights([0.0, 2.0, 1.0])

    def test_point_eval(self):
        u = as_field(lambda t, x: t + 2 * x)
        self.assertEqual(point_eval((1.0, 2.0)).evaluate(u), 5.0)

    def test_quadrature_is_exact_for_linear_fields(self):
        u = as_field(lambda t, x: 3 * x + t)
        functional = quadrature_functional(np.linspace(0, 2, 5), 1.0)
        self.assertAlmostEqual(functional.evaluate(u), 8.0)

    def test_operator_at(self):
        alpha = 0.5
        terms = (DiffTerm(1.0, (1, 0)), DiffTerm(-alpha, (0, 2)))
        functional = operator_at(terms, (1.0, 2.0))
        self.assertAlmostEqual(
            functional.evaluate(polynomial_field), 4.0 - alpha * 2.0
        )
        self.assertEqual(functional.max_orders, (1, 2))

    def test_linear_combinations(self):
        z1, z2 = (0.5, 1.0), (2.0, 3.0)
        combined = 2 * point_eval(z1) + point_eval(z2).scaled(-1.0)
        self.assertAlmostEqual(
            combined.evaluate(polynomial_field), 2 * 0.5 - 18.0
        )
        self.assertEqual(len(combined.atoms), 2)

    def test_as_field_rejects_derivatives(self):
        u = as_field(lambda t, x: t * x)
        with self.assertRaises(InsufficientSmoothnessError):
            operator_at((DiffTerm(1.0, (0, 1)),), (0.0, 0.0)).evaluate(u)

    def test_evaluate_functionals_zero_mean(self):
        rng = np.random.default_rng(0)
        functionals = [random_functional(rng) for _ in range(4)]
        np.testing.assert_array_equal(
            evaluate_functionals(functionals, zero_mean), np.zeros(4)
        )

    def test_cross_cov_matrix_matches_pairwise(self):
        kernel = unit_prior()
        rng = np.random.default_rng(1)
        left = [random_functional(rng) for _ in range(3)]
        right = [random_functional(rng) for _ in range(4)]
        matrix = cross_cov_matrix(kernel, left, right)
        self.assertEqual(matrix.shape, (3, 4))
        for i, a in enumerate(left):
            for j, b in enumerate(right):
                print("Testing cross-covariance entry %s,%s" % (i, j), end=" ")
                self.assertAlmostEqual(
                    matrix[i, j], functional_cross_cov(kernel, a, b)
                )
                print("✓")

    def test_cross_cov_is_bilinear(self):
        kernel = unit_prior()
        rng = np.random.default_rng(2)
        a, b, c = (random_functional(rng) for _ in range(3))
        self.assertAlmostEqual(
            functional_cross_cov(kernel, a + 2 * b, c),
            functional_cross_cov(kernel, a, c)
            + 2 * functional_cross_cov(kernel, b, c),
        )
        self.assertAlmostEqual(
            functional_cross_cov(kernel, a, b),
            functional_cross_cov(kernel, b, a),
        )

    def test_cross_cov_diagonal(self):
        kernel = unit_prior()
        rng = np.random.default_rng(3)
        functionals = [random_functional(rng) for _ in range(5)]
        np.testing.assert_allclose(
            cross_cov_diagonal(kernel, functionals),
            np.diag(cross_cov_matrix(kernel, functionals, functionals)),
            rtol=1e-10,
            atol=1e-10,
        )
        self.assertTrue(np.all(cross_cov_diagonal(kernel, functionals) > 0))

    def test_operator_kernel_finite_differences(self):
        """Cov(D U(r), U(s)) is D applied to the kernel in r."""
        kernel = unit_prior(rho=(1.5, 2.0))
        alpha, mu = 0.3, 0.7
        terms = (
            DiffTerm(1.0, (1, 0)),
            DiffTerm(mu, (0, 1)),
            DiffTerm(-alpha, (0, 2)),
        )
        rng = np.random.default_rng(4)
        eps = 1e-4

        def k(r, s):
            return kernel.cross_cov((0, 0), (0, 0), r, s)

        for _ in range(50):
            r = tuple(rng.uniform(0, 1, 2))
            s = tuple(rng.uniform(2, 3, 2))
            d_t = (k((r[0] + eps, r[1]), s) - k((r[0] - eps, r[1]), s)) / (
                2 * eps
            )
            d_x = (k((r[0], r[1] + eps), s) - k((r[0], r[1] - eps), s)) / (
                2 * eps
            )
            d_xx = (
                k((r[0], r[1] + eps), s)
                - 2 * k(r, s)
                + k((r[0], r[1] - eps), s)
            ) / eps**2
            numeric = d_t + mu * d_x - alpha * d_xx
            exact = functional_cross_cov(
                kernel, operator_at(terms, r), point_eval(s)
            )
            self.assertLess(abs(exact - numeric), 1e-5 * max(1, abs(numeric)))

    def test_term_table_extend(self):
        table = TermTable.from_functionals([point_eval((0.0, 0.0))])
        table.extend(
            [operator_at((DiffTerm(2.0, (0, 2)),), (1.0, 1.0))] * 2
        )
        self.assertEqual(table.size, 3)
        self.assertEqual(table.max_orders, (0, 2))
        np.testing.assert_array_equal(table.groups[(0, 2)].owner, [1, 2])

    def test_check_budget(self):
        kernel = unit_prior()
        table = TermTable.from_functionals(
            [operator_at((DiffTerm(1.0, (2, 0)),), (0.0, 0.0))]
        )
        with self.assertRaises(InsufficientSmoothnessError):
            check_budget(kernel, table)

    def test_functional_gram_is_positive_semidefinite(self):
        for seed in (0, 1, 2):
            print("Testing functional Gram, seed %d" % seed, end=" ")
            rng = np.random.default_rng(seed)
            functionals = [random_functional(rng) for _ in range(12)]
            functionals.append(quadrature_functional([0.0, 0.5, 1.0], 0.3))
            gram = cross_cov_matrix(unit_prior(), functionals, functionals)
            trace = float(np.trace(gram))
            np.testing.assert_allclose(gram, gram.T, atol=1e-10 * trace)
            eigenvalues = np.linalg.eigvalsh((gram + gram.T) / 2)
            self.assertGreaterEqual(np.min(eigenvalues), -1e-8 * trace)
            print("✓")
