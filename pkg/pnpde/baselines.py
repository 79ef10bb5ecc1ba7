import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import List, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import LinAlgError, solve_banded

from pnpde.exceptions import ReferenceNotConvergedError, SingularSystemError
from pnpde.models import FDField, Grid, LinearisationKind
from pnpde.problems import PDEProblem

logger = getLogger("pnpde")

MIN_REFINE = 4
# time steps per forcing period on the coarser reference grid
STEPS_PER_PERIOD = 60


def check_crank_nicolson_support(problem: PDEProblem) -> None:
    orders = {term.orders: term.coeff for term in problem.p_terms}
    if set(orders) - {(1, 0), (0, 2)} or orders.get((1, 0)) != 1.0:
        raise ValueError(
            f"Crank-Nicolson needs P = d_t - alpha d_x^2, got "
            f"{problem.p_terms!r} for {problem.name}"
        )
    if (
        problem.q_scale
        and problem.strategy_hint is not LinearisationKind.LAG_MEAN
    ):
        raise ValueError(
            f"Crank-Nicolson only handles advective nonlinearities, "
            f"not {problem.name}"
        )


def _level(problem: PDEProblem, t: float, x_nodes: np.ndarray) -> np.ndarray:
    return np.array([problem.f(t, x) for x in x_nodes])


def crank_nicolson(problem: PDEProblem, grid: Grid) -> FDField:
    """Crank-Nicolson solution of u_t + q_scale u u_x - alpha u_xx = f.

    Diffusion, advection and forcing are averaged between the two time
    levels. The advective coefficient is lagged: it is taken wholly from the
    previous level, so every step is a single tridiagonal solve. The x
    endpoints are Dirichlet rows pinned to h. f is evaluated at every grid
    node exactly once through the problem's counter.
    """
    check_crank_nicolson_support(problem)
    n, m = grid.shape
    if grid.boundary_index_set != (0, m - 1):
        raise ValueError("Crank-Nicolson needs Dirichlet data at both ends")
    x = grid.x_nodes
    t_nodes = [float(t) for t in grid.t_nodes]
    interior = slice(1, m - 1)

    values = np.zeros((n, m))
    values[0, 0] = problem.h(t_nodes[0], x[0])
    values[0, -1] = problem.h(t_nodes[0], x[-1])
    values[0, interior] = [problem.g(xj) for xj in x[interior]]
    if n == 1:
        _level(problem, t_nodes[0], x)
        return FDField(grid, values)

    dt, dx = grid.delta, float(x[1] - x[0])
    r = problem.diffusivity * dt / (2 * dx**2)
    f_prev = _level(problem, t_nodes[0], x)
    for i in range(n - 1):
        u = values[i]
        f_next = _level(problem, t_nodes[i + 1], x)
        s = problem.q_scale * u[interior] * dt / (4 * dx)

        banded = np.zeros((3, m))
        banded[1, 0] = banded[1, -1] = 1.0
        banded[1, interior] = 1 + 2 * r
        banded[0, 2:] = -r + s
        banded[2, : m - 2] = -r - s

        rhs = np.empty(m)
        rhs[0] = problem.h(t_nodes[i + 1], x[0])
        rhs[-1] = problem.h(t_nodes[i + 1], x[-1])
        rhs[interior] = (
            (1 - 2 * r) * u[interior]
            + (r + s) * u[: m - 2]
            + (r - s) * u[2:]
            + dt / 2 * (f_prev[interior] + f_next[interior])
        )
        try:
            values[i + 1] = solve_banded((1, 1), banded, rhs)
        except (LinAlgError, ValueError) as e:
            raise SingularSystemError(i + 1) from e
        if not np.all(np.isfinite(values[i + 1])):
            raise SingularSystemError(i + 1)
        f_prev = f_next
    return FDField(grid, values)


@dataclass(frozen=True)
class ReferenceSolution:
    """A fine Crank-Nicolson field used as ground truth, evaluated by
    bilinear interpolation. error_estimate is the Richardson estimate of
    its own error, from a second solve at half the resolution."""

    solution: FDField
    error_estimate: float
    _interpolator: RegularGridInterpolator = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        grid = self.solution.grid
        interpolator = RegularGridInterpolator(
            (grid.t_nodes, grid.x_nodes),
            self.solution.values,
            method="linear",
            bounds_error=False,
            fill_value=None,
        )
        # use setattr because this class is frozen
        object.__setattr__(self, "_interpolator", interpolator)

    def __call__(self, t, x) -> np.ndarray:
        t, x = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        )
        points = np.stack([t.ravel(), x.ravel()], axis=-1)
        return self._interpolator(points).reshape(t.shape)

    def check(self, smallest_error: float, fraction: float = 0.1) -> None:
        """Raise unless the estimated truth error is below fraction times
        the smallest error being measured against this reference."""
        if self.error_estimate > fraction * smallest_error:
            raise ReferenceNotConvergedError(
                f"Reference error estimate {self.error_estimate:.3g} is not "
                f"below {fraction} x {smallest_error:.3g}"
            )


def richardson_order(problem: PDEProblem) -> int:
    """Time order of crank_nicolson on this problem. The lagged advective
    coefficient drops the scheme to first order in time."""
    return 1 if problem.q_scale else 2


def reference_shapes(
    problem: PDEProblem,
    refine: int,
    base_shape: Tuple[int, int],
    max_dt: Optional[float] = None,
) -> List[Tuple[int, int]]:
    """Shapes of the two reference grids, refine and 2 * refine times finer
    than base_shape in x. The time axis is refined at least as much, and
    further until the coarser grid's step is at most max_dt."""
    n, m = base_shape
    if n < 2 or m < 3:
        raise ValueError(f"Reference base grid too small: {base_shape}")
    t_refine = refine
    if max_dt is not None:
        if not max_dt > 0:
            raise ValueError(f"max_dt must be positive, got {max_dt}")
        duration = problem.t_span[1] - problem.t_span[0]
        t_refine = max(refine, math.ceil(duration / (max_dt * (n - 1))))
    return [
        (k * t_refine * (n - 1) + 1, k * refine * (m - 1) + 1) for k in (1, 2)
    ]


def reference_solution(
    problem: PDEProblem,
    refine: int = 8,
    base_shape: Tuple[int, int] = (17, 33),
    tolerance: Optional[float] = None,
    max_dt: Optional[float] = None,
) -> ReferenceSolution:
    """Solve on grids refine and 2 * refine times finer than base_shape.

    Args:
        problem: A Burgers-family problem. It is cloned, so its counters
            are untouched.
        refine: Refinement factor, at least MIN_REFINE.
        base_shape: The (n, m) of the largest experiment grid.
        tolerance: If given, raise when the Richardson estimate exceeds it.
        max_dt: Largest time step of the coarser reference grid. Defaults
            to the problem's forcing period over STEPS_PER_PERIOD, if it
            declares one.

    Returns:
        The finer field as an interpolating truth.
    """
    if refine < MIN_REFINE:
        raise ValueError(
            f"refine must be at least {MIN_REFINE}, got {refine}"
        )
    if max_dt is None and "period" in problem.params:
        max_dt = problem.params["period"] / STEPS_PER_PERIOD
    shapes = reference_shapes(problem, refine, base_shape, max_dt)
    fields = [
        crank_nicolson(
            problem.clone(memoise=False), problem.grid(*shape)
        ).values
        for shape in shapes
    ]
    coarse, fine = fields
    order = richardson_order(problem)
    estimate = float(np.max(np.abs(fine[::2, ::2] - coarse))) / (
        2**order - 1
    )
    logger.info(
        "Reference for %s on %s and %s (order %d): error estimate %.3g",
        problem.name,
        shapes[0],
        shapes[1],
        order,
        estimate,
    )
    if tolerance is not None and estimate > tolerance:
        raise ReferenceNotConvergedError(
            f"Reference error estimate {estimate:.3g} exceeds {tolerance:.3g}"
        )
    return ReferenceSolution(
        FDField(problem.grid(*shapes[1]), fine), estimate
    )
