from .baselines import crank_nicolson, reference_solution
from .metrics import sup_error, z_score
from .problems import get_problem
from .solver import default_prior, rational_quadratic_prior, solve_pnm

__version__ = "0.1.0"

__all__ = [
    "solve_pnm",
    "default_prior",
    "rational_quadratic_prior",
    "crank_nicolson",
    "reference_solution",
    "sup_error",
    "z_score",
    "get_problem",
]

# No need to create API documentation for these internal helper modules
__pdoc__ = {
    "cli": False,
    "test_factories": False,
    "utils": False,
}
