import math
import time
from logging import getLogger
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from pnpde.exceptions import (
    InsufficientSmoothnessError,
    StrategyMismatchError,
    UnsupportedSmoothnessError,
)
from pnpde.gp import (
    amplitude_mle,
    assimilate,
    gp_init,
    posterior_mean,
    predict,
)
from pnpde.kernels import (
    MAX_MATERN_INDEX,
    MaternHalfInteger,
    RationalQuadratic,
    TensorKernel,
)
from pnpde.models import (
    DiffTerm,
    Grid,
    LinearisationKind,
    LinearisationStrategy,
    SolveOptions,
    SolveReport,
)
from pnpde.operators import (
    FieldFunction,
    Orders,
    operator_at,
    point_eval,
    quadrature_functional,
    trapezoid_weights,
    zero_mean,
)
from pnpde.problems import PDEProblem, eval_counts

logger = getLogger("pnpde")

SECOND_X_DERIVATIVE = (DiffTerm(1.0, (0, 2)),)


def default_prior(
    beta: Tuple[int, int] = (1, 2), rho_t: float = 1.0, rho_x: float = 1.0
) -> TensorKernel:
    """Matérn tensor prior at unit amplitude for a PDE of order beta_t in
    time and beta_x in space: smoothness nu = beta + 1/2 per axis.

    Args:
        beta: (beta_t, beta_x), each in 0..3.
        rho_t: Time length-scale.
        rho_x: Space length-scale.
    """
    if len(beta) != 2:
        raise UnsupportedSmoothnessError(
            f"beta must be a pair (beta_t, beta_x), got {beta!r}"
        )
    for b in beta:
        if not isinstance(b, (int, np.integer)) or not (
            0 <= b <= MAX_MATERN_INDEX
        ):
            raise UnsupportedSmoothnessError(
                f"beta entries must be integers in 0..{MAX_MATERN_INDEX}, "
                f"got {beta!r}"
            )
    return TensorKernel(
        (
            MaternHalfInteger(int(beta[0]), 1.0, rho_t),
            MaternHalfInteger(int(beta[1]), 1.0, rho_x),
        )
    )


def rational_quadratic_prior(
    rho_t: float = math.sqrt(3.0), rho_x: float = math.sqrt(3.0)
) -> TensorKernel:
    """Infinitely smooth alternative prior at unit amplitude."""
    return TensorKernel(
        (RationalQuadratic(1.0, rho_t), RationalQuadratic(1.0, rho_x))
    )


def linearise_step(
    strategy: LinearisationStrategy,
    mean_at_nodes: Sequence[float],
    dxx_mean_at_nodes: Optional[Sequence[float]],
    t_i: float,
) -> List[List[DiffTerm]]:
    """Replace the nonlinear part Q by a linear operator at every x node of
    step i, using the posterior mean before step i's data.

    Args:
        strategy: Which linearisation to use.
        mean_at_nodes: Posterior mean at (t_i, x_j), one per node.
        dxx_mean_at_nodes: Posterior mean of d_x^2 u at (t_i, x_j); only
            POROUS_Q2 needs it.
        t_i: The step's time.

    Returns:
        One list of DiffTerm per node.
    """
    mean = [float(v) for v in mean_at_nodes]
    m = len(mean)
    dxx = None
    if dxx_mean_at_nodes is not None:
        dxx = [float(v) for v in dxx_mean_at_nodes]
        if len(dxx) != m:
            raise StrategyMismatchError(
                f"Got {m} mean values but {len(dxx)} d_x^2 mean values"
            )

    kind = strategy.kind
    if kind is LinearisationKind.LINEAR:
        return [[] for _ in mean]
    if kind is LinearisationKind.LAG_MEAN:
        return [[DiffTerm(mu, (0, 1))] for mu in mean]
    if kind is LinearisationKind.POROUS_Q1:
        return [[DiffTerm(mu, (0, 1)), DiffTerm(mu, (0, 2))] for mu in mean]
    if kind is LinearisationKind.POROUS_Q2:
        if dxx is None:
            raise StrategyMismatchError(
                "POROUS_Q2 needs the posterior mean of d_x^2 u at the nodes"
            )
        return [
            [DiffTerm(mu, (0, 1)), DiffTerm(c, (0, 0))]
            for mu, c in zip(mean, dxx)
        ]

    if strategy.builder is None:
        raise StrategyMismatchError("A custom linearisation needs a builder")
    built = strategy.builder(
        np.array(mean), None if dxx is None else np.array(dxx), t_i
    )
    terms = [list(node_terms) for node_terms in built]
    if len(terms) != m:
        raise StrategyMismatchError(
            f"Custom linearisation returned {len(terms)} term lists for "
            f"{m} nodes"
        )
    return terms


def assemble_operator(
    p_terms: Sequence[DiffTerm],
    q_terms: Sequence[DiffTerm],
    q_scale: float = 1.0,
) -> Tuple[DiffTerm, ...]:
    """D = P + q_scale * Q with terms of equal orders merged and exact
    zeros dropped, in order of first appearance."""
    coeffs: Dict[Orders, float] = {}
    for term in p_terms:
        coeffs[term.orders] = coeffs.get(term.orders, 0.0) + term.coeff
    for term in q_terms:
        coeffs[term.orders] = (
            coeffs.get(term.orders, 0.0) + q_scale * term.coeff
        )
    return tuple(
        DiffTerm(coeff, orders)
        for orders, coeff in coeffs.items()
        if coeff != 0.0
    )


def _check_prior(
    kernel: TensorKernel,
    problem: PDEProblem,
    strategy: LinearisationStrategy,
) -> None:
    needed = [term.orders for term in problem.p_terms]
    if problem.q_scale != 0:
        needed.append(strategy.max_orders)
    for orders in needed:
        if not kernel.supports(orders):
            raise InsufficientSmoothnessError(
                f"Prior budget {kernel.budget} does not cover derivative "
                f"orders {orders} of {problem.name}"
            )


def solve_pnm(
    problem: PDEProblem,
    grid: Grid,
    kernel: TensorKernel,
    strategy: Optional[LinearisationStrategy] = None,
    options: Optional[SolveOptions] = None,
    prior_mean: FieldFunction = zero_mean,
) -> SolveReport:
    """Solve the problem by sequential Gaussian process conditioning.

    The prior is first conditioned on the initial data g at the interior x
    nodes of t_0. Then, for each t_i in turn:

    1. the nonlinear part is linearised around the current posterior mean
       at (t_i, x_nodes);
    2. the differential data f(t_i, x_j) are assimilated as exact
       observations of D_i u at every x node, and their Mahalanobis norm is
       kept for the amplitude estimate;
    3. the boundary data h(t_i, .) are assimilated, together with, when
       conserving mass and i >= 1, the trapezoidal mass at t_i pinned to
       the mass of the initial data.

    Args:
        problem: The problem. Its f, g and h counters record the cost.
        grid: Space-time grid; its boundary indices get the h data.
        kernel: Prior covariance at unit amplitude.
        strategy: Linearisation, by default the problem's hint.
        options: Solver options.
        prior_mean: Prior mean field, zero by default.

    Returns:
        A SolveReport with the posterior mean and std on the grid.
    """
    options = options or SolveOptions()
    if strategy is None:
        strategy = LinearisationStrategy(problem.strategy_hint)
    _check_prior(kernel, problem, strategy)
    start = time.perf_counter()
    logger.info(
        "Solving %s on a %dx%d grid (%s)",
        problem.name,
        grid.n,
        grid.m,
        strategy.kind.value,
    )

    state = gp_init(prior_mean, kernel, options.jitter)
    t0 = float(grid.t_nodes[0])
    x_nodes = [float(x) for x in grid.x_nodes]
    interior = grid.interior_indices
    initial_data = [
        (point_eval((t0, x_nodes[j])), problem.g(x_nodes[j]))
        for j in interior
    ]
    assimilate(state, initial_data, record_mle=False)

    initial_mass = None
    if options.conserve_mass:
        # memoised, so these are the same evaluations assimilated below
        initial_values = np.array(
            [
                problem.h(t0, x)
                if j in grid.boundary_index_set
                else problem.g(x)
                for j, x in enumerate(x_nodes)
            ]
        )
        initial_mass = float(trapezoid_weights(x_nodes) @ initial_values)

    for i, t_i in enumerate(float(t) for t in grid.t_nodes):
        nodes = [(t_i, x) for x in x_nodes]
        mean = dxx = None
        if problem.q_scale != 0:
            mean = posterior_mean(state, [point_eval(z) for z in nodes])
            if strategy.needs_dxx:
                dxx = posterior_mean(
                    state,
                    [operator_at(SECOND_X_DERIVATIVE, z) for z in nodes],
                )
        q_terms = (
            linearise_step(strategy, mean, dxx, t_i)
            if mean is not None
            else [[] for _ in nodes]
        )
        differential = [
            (
                operator_at(
                    assemble_operator(problem.p_terms, q, problem.q_scale), z
                ),
                problem.f(*z),
            )
            for z, q in zip(nodes, q_terms)
        ]
        _, norm = assimilate(state, differential, step=i, record_mle=True)

        constraints = [
            (point_eval(nodes[j]), problem.h(*nodes[j]))
            for j in grid.boundary_index_set
        ]
        if initial_mass is not None and i >= 1:
            constraints.append(
                (quadrature_functional(x_nodes, t_i), initial_mass)
            )
        assimilate(state, constraints, step=i, record_mle=False)
        logger.debug(
            "Step %d: t=%.6g, %d differential and %d constraint rows, "
            "norm^2 %.6g",
            i,
            t_i,
            len(differential),
            len(constraints),
            norm,
        )

    sigma_hat = amplitude_mle(state, grid.n, options.mle_normalisation)

    T, X = grid.mesh()
    functionals = [point_eval(z) for z in zip(T.ravel(), X.ravel())]
    means, variances = predict(state, functionals, diagonal=True)
    covariance = None
    if options.full_covariance:
        _, covariance = predict(state, functionals)
    mean_field = means.reshape(grid.shape)

    mass_by_time = None
    if options.conserve_mass:
        mass_by_time = mean_field @ trapezoid_weights(x_nodes)

    elapsed = time.perf_counter() - start
    logger.info(
        "Solved %s on a %dx%d grid: sigma_hat=%.6g in %.2fs",
        problem.name,
        grid.n,
        grid.m,
        sigma_hat,
        elapsed,
    )
    return SolveReport(
        grid=grid,
        mean_field=mean_field,
        unit_std_field=np.sqrt(variances).reshape(grid.shape),
        sigma_hat=sigma_hat,
        cost=eval_counts(problem),
        jitter_events=list(state.jitter_events),
        mass_by_time=mass_by_time,
        initial_mass=initial_mass,
        runtime_seconds=elapsed,
        state=state if options.keep_state else None,
        covariance=covariance,
    )
