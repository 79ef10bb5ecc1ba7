import math
from unittest import TestCase

import numpy as np

from pnpde.exceptions import (
    InsufficientSmoothnessError,
    StrategyMismatchError,
    UnsupportedSmoothnessError,
)
from pnpde.gp import condition_batch, predict
from pnpde.kernels import MaternHalfInteger, RationalQuadratic
from pnpde.metrics import mass_drift
from pnpde.models import (
    DiffTerm,
    EvalCounts,
    JitterPolicy,
    LinearisationKind,
    LinearisationStrategy,
    SolveOptions,
)
from pnpde.operators import point_eval, zero_mean
from pnpde.problems import (
    burgers_forced,
    burgers_homogeneous,
    porous_medium,
)
from pnpde.solver import (
    assemble_operator,
    default_prior,
    linearise_step,
    rational_quadratic_prior,
    solve_pnm,
)
from pnpde.test_factories import (
    tiny_options,
    unit_grid,
    unit_prior,
    zero_problem,
)

TINY_JITTER = JitterPolicy(initial=1e-14, factor=10.0, maximum=1e-6)


def oracle_options(conserve_mass: bool = False) -> SolveOptions:
    return SolveOptions(
        conserve_mass=conserve_mass,
        jitter=TINY_JITTER,
        keep_state=True,
        full_covariance=True,
    )


class SolverTest(TestCase):
    def test_default_prior(self):
        kernel = default_prior((1, 2), 0.5, 2.0)
        t_factor, x_factor = kernel.factors
        self.assertIsInstance(t_factor, MaternHalfInteger)
        self.assertEqual((t_factor.p, x_factor.p), (1, 2))
        self.assertEqual((t_factor.rho, x_factor.rho), (0.5, 2.0))
        self.assertEqual(kernel.budget, (1, 2))

    def test_default_prior_rejects_unsupported_smoothness(self):
        for beta in ((1, 4), (-1, 2), (1.5, 2), (1,)):
            print("Testing default_prior(%s)" % (beta,), end=" ")
            with self.assertRaises(UnsupportedSmoothnessError):
                default_prior(beta)
            print("✓")

    def test_rational_quadratic_prior(self):
        kernel = rational_quadratic_prior()
        for factor in kernel.factors:
            self.assertIsInstance(factor, RationalQuadratic)
            self.assertAlmostEqual(factor.rho, math.sqrt(3))
        self.assertEqual(kernel.budget, (2, 2))

    def test_linearise_lag_mean(self):
        strategy = LinearisationStrategy(LinearisationKind.LAG_MEAN)
        terms = linearise_step(strategy, [0.5, -1.0], None, 0.0)
        self.assertEqual(
            terms,
            [[DiffTerm(0.5, (0, 1))], [DiffTerm(-1.0, (0, 1))]],
        )

    def test_linearise_porous(self):
        q1 = LinearisationStrategy(LinearisationKind.POROUS_Q1)
        self.assertEqual(
            linearise_step(q1, [2.0], None, 1.0),
            [[DiffTerm(2.0, (0, 1)), DiffTerm(2.0, (0, 2))]],
        )
        q2 = LinearisationStrategy(LinearisationKind.POROUS_Q2)
        self.assertTrue(q2.needs_dxx)
        self.assertEqual(
            linearise_step(q2, [2.0], [-3.0], 1.0),
            [[DiffTerm(2.0, (0, 1)), DiffTerm(-3.0, (0, 0))]],
        )
        with self.assertRaises(StrategyMismatchError):
            linearise_step(q2, [2.0], None, 1.0)
        with self.assertRaises(StrategyMismatchError):
            linearise_step(q2, [2.0, 1.0], [0.0], 1.0)

    def test_linearise_linear_and_custom(self):
        linear = LinearisationStrategy(LinearisationKind.LINEAR)
        self.assertEqual(
            linearise_step(linear, [1.0, 2.0], None, 0.0), [[], []]
        )

        def builder(mean, dxx, t):
            return [[DiffTerm(t * mu, (0, 0))] for mu in mean]

        custom = LinearisationStrategy(LinearisationKind.CUSTOM, builder)
        self.assertEqual(
            linearise_step(custom, [1.0, 2.0], None, 3.0),
            [[DiffTerm(3.0, (0, 0))], [DiffTerm(6.0, (0, 0))]],
        )
        with self.assertRaises(StrategyMismatchError):
            linearise_step(
                LinearisationStrategy(LinearisationKind.CUSTOM), [1.0], None, 0
            )
        short = LinearisationStrategy(
            LinearisationKind.CUSTOM, lambda mean, dxx, t: []
        )
        with self.assertRaises(StrategyMismatchError):
            linearise_step(short, [1.0], None, 0.0)

    def test_strategy_from_name(self):
        self.assertIs(
            LinearisationStrategy.from_name("Porous_Q2").kind,
            LinearisationKind.POROUS_Q2,
        )
        for name in ("custom", "newton"):
            with self.assertRaises(ValueError):
                LinearisationStrategy.from_name(name)

    def test_assemble_operator(self):
        p_terms = (DiffTerm(1.0, (1, 0)), DiffTerm(-0.5, (0, 2)))
        self.assertEqual(assemble_operator(p_terms, [], 1.0), p_terms)
        merged = assemble_operator(
            p_terms, [DiffTerm(0.25, (0, 2)), DiffTerm(3.0, (0, 1))], 2.0
        )
        self.assertEqual(
            merged, (DiffTerm(1.0, (1, 0)), DiffTerm(6.0, (0, 1)))
        )
        self.assertEqual(
            assemble_operator(p_terms, [DiffTerm(3.0, (0, 1))], 0.0),
            p_terms,
        )

    def test_insufficient_prior(self):
        with self.assertRaises(InsufficientSmoothnessError):
            solve_pnm(zero_problem(), unit_grid(), default_prior((1, 1)))
        with self.assertRaises(InsufficientSmoothnessError):
            solve_pnm(
                porous_medium(),
                porous_medium().grid(3, 5),
                default_prior((1, 1)),
            )

    def test_zero_problem(self):
        problem = zero_problem()
        report = solve_pnm(problem, unit_grid(), unit_prior())
        np.testing.assert_array_equal(report.mean_field, np.zeros((3, 5)))
        self.assertEqual(report.sigma_hat, 0.0)
        np.testing.assert_array_equal(report.std_field, np.zeros((3, 5)))
        self.assertEqual(report.cost, EvalCounts(15, 3, 6))
        self.assertIsNone(report.state)
        self.assertIsNone(report.covariance)
        self.assertTrue(np.all(report.unit_std_field >= 0))

    def test_reproduces_initial_and_boundary_data(self):
        problem = burgers_homogeneous()
        grid = problem.grid(5, 5)
        report = solve_pnm(problem, grid, default_prior((1, 2), 6.0, 3.0))
        T, X = grid.mesh()
        truth = problem.truth(T, X)
        np.testing.assert_allclose(
            report.mean_field[0], truth[0], rtol=0, atol=1e-6
        )
        np.testing.assert_allclose(
            report.mean_field[:, [0, -1]], truth[:, [0, -1]], atol=1e-6
        )
        self.assertEqual(report.cost, EvalCounts(25, 3, 10))
        self.assertGreater(report.sigma_hat, 0)
        self.assertEqual(report.mean_field.shape, (5, 5))

    def test_solve_does_not_double_count_memoised_calls(self):
        problem = burgers_homogeneous()
        grid = problem.grid(3, 5)
        kernel = default_prior((1, 2), 6.0, 3.0)
        solve_pnm(problem, grid, kernel)
        report = solve_pnm(problem, grid, kernel)
        self.assertEqual(report.cost, EvalCounts(15, 3, 6))

    def test_matches_one_shot_conditioning(self):
        """Sequential solving agrees with conditioning on the whole
        dataset at once, for every benchmark problem."""
        test_cases = (
            (burgers_homogeneous(), default_prior((1, 2), 6.0, 3.0)),
            (porous_medium(), default_prior((1, 2), 1.0, 2.0)),
            (burgers_forced(), default_prior((1, 2), 0.5, 0.5)),
        )
        for problem, kernel in test_cases:
            print("Testing one-shot equivalence on %s" % problem.name, end=" ")
            grid = problem.grid(3, 5)
            report = solve_pnm(problem, grid, kernel, options=oracle_options())
            oneshot = condition_batch(
                zero_mean, kernel, report.state.observations, TINY_JITTER
            )
            T, X = grid.mesh()
            functionals = [point_eval(z) for z in zip(T.ravel(), X.ravel())]
            mean, cov = predict(oneshot, functionals)
            np.testing.assert_allclose(
                report.mean_field.ravel(), mean, rtol=0, atol=1e-8
            )
            np.testing.assert_allclose(report.covariance, cov, atol=1e-7)
            print("✓")

    def test_mass_conservation(self):
        problem = porous_medium()
        grid = problem.grid(3, 5)
        report = solve_pnm(
            problem,
            grid,
            default_prior((1, 2), 1.0, 2.0),
            options=oracle_options(conserve_mass=True),
        )
        self.assertIsNotNone(report.initial_mass)
        self.assertLess(
            mass_drift(report.mean_field, grid.x_nodes, report.initial_mass),
            1e-8,
        )
        np.testing.assert_allclose(
            report.mass_by_time,
            report.initial_mass,
            rtol=1e-8,
        )

    def test_conservation_adds_one_row_per_later_step(self):
        problem = porous_medium()
        grid = problem.grid(3, 5)
        kernel = default_prior((1, 2), 1.0, 2.0)
        sizes = [
            solve_pnm(
                problem, grid, kernel, options=tiny_options(conserve)
            ).state.size
            for conserve in (False, True)
        ]
        # 3 initial, 5 differential and 2 boundary rows per step
        self.assertEqual(sizes, [3 + 3 * 7, 3 + 3 * 7 + 2])

    def test_porous_second_linearisation(self):
        problem = porous_medium()
        grid = problem.grid(3, 5)
        report = solve_pnm(
            problem,
            grid,
            default_prior((1, 2), 1.0, 2.0),
            LinearisationStrategy(LinearisationKind.POROUS_Q2),
        )
        self.assertTrue(np.all(np.isfinite(report.mean_field)))
        self.assertEqual(report.cost, EvalCounts(15, 3, 6))

    def test_amplitude_uses_only_differential_batches(self):
        for conserve in (False, True):
            print("Testing recorded norms, conserve=%s" % conserve, end=" ")
            problem = porous_medium()
            grid = problem.grid(4, 5)
            report = solve_pnm(
                problem,
                grid,
                default_prior((1, 2), 1.0, 2.0),
                options=tiny_options(conserve),
            )
            self.assertEqual(len(report.state.mle_terms), grid.n)
            self.assertEqual(report.state.mle_counts, [grid.m] * grid.n)
            self.assertAlmostEqual(
                report.sigma_hat,
                math.sqrt(math.fsum(report.state.mle_terms) / grid.n),
            )
            print("✓")

    def test_per_observation_normalisation(self):
        problem = burgers_homogeneous()
        grid = problem.grid(3, 5)
        kernel = default_prior((1, 2), 6.0, 3.0)
        per_step = solve_pnm(problem, grid, kernel).sigma_hat
        per_observation = solve_pnm(
            problem,
            grid,
            kernel,
            options=SolveOptions(mle_normalisation="per-observation"),
        ).sigma_hat
        self.assertAlmostEqual(per_step / per_observation, math.sqrt(5))

    def test_single_time_node(self):
        problem = burgers_homogeneous()
        report = solve_pnm(
            problem, problem.grid(1, 5), default_prior((1, 2), 6.0, 3.0)
        )
        self.assertEqual(report.mean_field.shape, (1, 5))
        self.assertEqual(report.cost, EvalCounts(5, 3, 2))

    def test_lagged_zero_mean_equals_linear_operator(self):
        p_terms = zero_problem().p_terms
        lag_mean = LinearisationStrategy(LinearisationKind.LAG_MEAN)
        lagged = [
            assemble_operator(p_terms, q, 1.0)
            for q in linearise_step(lag_mean, np.zeros(5), None, 0.5)
        ]
        self.assertEqual(lagged, [tuple(p_terms)] * 5)

        advective = zero_problem()
        advective.q_scale = 1.0
        grid = unit_grid(3, 5)
        lagged_report = solve_pnm(
            advective, grid, unit_prior(), lag_mean, tiny_options()
        )
        linear_report = solve_pnm(
            zero_problem(),
            grid,
            unit_prior(),
            LinearisationStrategy(LinearisationKind.LINEAR),
            tiny_options(),
        )
        self.assertEqual(
            lagged_report.state.observations,
            linear_report.state.observations,
        )
        np.testing.assert_array_equal(
            lagged_report.mean_field, linear_report.mean_field
        )
