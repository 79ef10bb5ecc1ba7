from dataclasses import dataclass, field
from enum import Enum
from typing import (
    TYPE_CHECKING,
    Any,
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from pnpde.gp import GPState

Point = Tuple[float, float]

# Relative tolerance on the uniform spacing of the time grid
GRID_SPACING_RTOL = 1e-12


@dataclass(frozen=True)
class DiffTerm:
    """One term coeff * d^a_t d^a_x of a linear differential operator. The
    coefficient is a plain number: state-dependent coefficient fields are
    evaluated at the anchor before the term is built."""

    coeff: float
    orders: Tuple[int, int]

    def __post_init__(self):
        orders = tuple(int(o) for o in self.orders)
        if len(orders) != 2 or min(orders) < 0:
            raise ValueError(
                f"DiffTerm orders must be two nonnegative ints, "
                f"got {self.orders!r}"
            )
        # use setattr because this class is frozen
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "coeff", float(self.coeff))


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid t_0 < ... < t_{n-1}, x_1 < ... < x_m.
    boundary_index_set lists the x nodes that lie on the domain boundary."""

    t_nodes: np.ndarray
    x_nodes: np.ndarray
    boundary_index_set: Tuple[int, ...] = ()

    def __post_init__(self):
        t_nodes = np.asarray(self.t_nodes, dtype=float)
        x_nodes = np.asarray(self.x_nodes, dtype=float)
        if t_nodes.ndim != 1 or x_nodes.ndim != 1:
            raise ValueError("Grid nodes must be one-dimensional")
        if not len(t_nodes) or not len(x_nodes):
            raise ValueError("Grid must have at least one node per axis")
        if np.any(np.diff(t_nodes) <= 0) or np.any(np.diff(x_nodes) <= 0):
            raise ValueError("Grid nodes must be strictly increasing")
        if len(t_nodes) > 2:
            # linspace rounding scales with the magnitude of the nodes
            scale = max(float(np.abs(t_nodes).max()), 1.0)
            if np.ptp(np.diff(t_nodes)) > GRID_SPACING_RTOL * scale:
                raise ValueError("Time grid is not uniform")
        boundary = tuple(sorted(set(int(i) for i in self.boundary_index_set)))
        if boundary and (boundary[0] < 0 or boundary[-1] >= len(x_nodes)):
            raise ValueError(f"Boundary indices {boundary} out of range")
        object.__setattr__(self, "t_nodes", t_nodes)
        object.__setattr__(self, "x_nodes", x_nodes)
        object.__setattr__(self, "boundary_index_set", boundary)

    @classmethod
    def uniform(
        cls,
        t_span: Tuple[float, float],
        x_span: Tuple[float, float],
        n: int,
        m: int,
        with_boundary: bool = True,
    ) -> "Grid":
        """Build an n x m uniform grid whose x endpoints are the domain
        boundary."""
        if n < 1 or m < 2:
            raise ValueError(f"Need n >= 1 and m >= 2, got n={n}, m={m}")
        t_nodes = np.linspace(t_span[0], t_span[1], n)
        x_nodes = np.linspace(x_span[0], x_span[1], m)
        boundary = (0, m - 1) if with_boundary else ()
        return cls(t_nodes, x_nodes, boundary)

    @property
    def n(self) -> int:
        return len(self.t_nodes)

    @property
    def m(self) -> int:
        return len(self.x_nodes)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n, self.m

    @property
    def delta(self) -> float:
        """Time step; zero for a single time node."""
        return float(self.t_nodes[1] - self.t_nodes[0]) if self.n > 1 else 0.0

    @property
    def interior_indices(self) -> Tuple[int, ...]:
        boundary = set(self.boundary_index_set)
        return tuple(j for j in range(self.m) if j not in boundary)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (T, X) arrays of shape (n, m)."""
        return np.meshgrid(self.t_nodes, self.x_nodes, indexing="ij")


class LinearisationKind(Enum):
    LAG_MEAN = "lag_mean"
    POROUS_Q1 = "porous_q1"
    POROUS_Q2 = "porous_q2"
    LINEAR = "linear"
    CUSTOM = "custom"


# builder(mean_at_nodes, dxx_mean_at_nodes, t_i) -> per-node term lists
LinearisationBuilder = Callable[
    [np.ndarray, Optional[np.ndarray], float], List[List[DiffTerm]]
]


@dataclass(frozen=True)
class LinearisationStrategy:
    """How the nonlinear part Q of the operator is replaced by a linear
    operator Q_i at step i, using only the posterior mean available before
    step i's data are assimilated."""

    kind: LinearisationKind
    builder: Optional[LinearisationBuilder] = None
    needs_dxx: bool = False

    def __post_init__(self):
        if self.kind is LinearisationKind.POROUS_Q2:
            object.__setattr__(self, "needs_dxx", True)

    @classmethod
    def from_name(cls, name: str) -> "LinearisationStrategy":
        try:
            kind = LinearisationKind(name.lower())
        except ValueError:
            raise ValueError(
                f"Unknown linearisation {name!r}; expected one of "
                f"{[k.value for k in LinearisationKind]}"
            ) from None
        if kind is LinearisationKind.CUSTOM:
            raise ValueError("A custom linearisation needs a builder")
        return cls(kind)

    @property
    def max_orders(self) -> Tuple[int, int]:
        """Highest (a_t, a_x) this strategy can emit."""
        return {
            LinearisationKind.LAG_MEAN: (0, 1),
            LinearisationKind.POROUS_Q1: (0, 2),
            LinearisationKind.POROUS_Q2: (0, 1),
            LinearisationKind.LINEAR: (0, 0),
            LinearisationKind.CUSTOM: (0, 0),
        }[self.kind]


class MLENormalisation(Enum):
    PER_STEP = "per-step"
    PER_OBSERVATION = "per-observation"


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter added to each batch's conditional Gram matrix,
    relative to the mean prior variance of the batch."""

    initial: float = 1e-10
    factor: float = 10.0
    maximum: float = 1e-6

    def __post_init__(self):
        if not (0 < self.initial <= self.maximum) or self.factor <= 1:
            raise ValueError(f"Invalid jitter policy {self!r}")

    def levels(self) -> List[float]:
        levels = [self.initial]
        while levels[-1] * self.factor <= self.maximum * (1 + 1e-9):
            levels.append(levels[-1] * self.factor)
        return levels


@dataclass(frozen=True)
class JitterEvent:
    """Record of a jitter escalation beyond the policy's initial level."""

    step: Optional[int]
    jitter: float
    batch_size: int

    def as_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "jitter": self.jitter,
            "batch_size": self.batch_size,
        }


@dataclass(frozen=True)
class SolveOptions:
    conserve_mass: bool = False
    mle_normalisation: MLENormalisation = MLENormalisation.PER_STEP
    jitter: JitterPolicy = field(default_factory=JitterPolicy)
    z_floor: float = 1e-6
    # keep the final GP state (and optionally the full joint covariance of
    # the grid values) on the report; tiny instances only
    keep_state: bool = False
    full_covariance: bool = False

    def __post_init__(self):
        if not self.z_floor > 0:
            raise ValueError(f"z_floor must be positive, got {self.z_floor}")
        if isinstance(self.mle_normalisation, str):
            object.__setattr__(
                self,
                "mle_normalisation",
                MLENormalisation(self.mle_normalisation),
            )


@dataclass(frozen=True)
class EvalCounts:
    f: int = 0
    g: int = 0
    h: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {"f": self.f, "g": self.g, "h": self.h}


@dataclass
class SolveReport:
    """Output of `pnpde.solver.solve_pnm`: posterior fields on the grid, the
    amplitude estimate and cost counters. `metrics` is filled in by the
    caller once a truth field is available."""

    grid: Grid
    mean_field: np.ndarray
    unit_std_field: np.ndarray
    sigma_hat: float
    cost: EvalCounts
    jitter_events: List[JitterEvent] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)
    mass_by_time: Optional[np.ndarray] = None
    initial_mass: Optional[float] = None
    runtime_seconds: float = 0.0
    state: Optional["GPState"] = None
    covariance: Optional[np.ndarray] = None

    @property
    def std_field(self) -> np.ndarray:
        """Posterior standard deviation at the estimated amplitude."""
        return self.sigma_hat * self.unit_std_field


@dataclass(frozen=True)
class FDField:
    """Finite-difference solution values on a grid, shape (n, m)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"Field shape {values.shape} does not match grid "
                f"{self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Finite-difference field has non-finite values")
        object.__setattr__(self, "values", values)


CSV_COLUMNS = (
    "n",
    "m",
    "e_inf",
    "z",
    "sigma_hat",
    "runtime_s",
    "f_evals",
    "g_evals",
    "h_evals",
    "jitter_events",
)


@dataclass(frozen=True)
class MetricRow:
    """One sweep cell's accuracy and calibration summary."""

    n: int
    m: int
    e_inf: float
    z_score: float
    sigma_hat: float
    runtime_seconds: float = 0.0
    f_evals: int = 0
    g_evals: int = 0
    h_evals: int = 0
    jitter_events: int = 0

    def __post_init__(self):
        if self.e_inf < 0 or self.z_score < 0:
            raise ValueError(f"Metrics must be nonnegative: {self!r}")

    def as_csv_row(self) -> Sequence[str]:
        return (
            str(self.n),
            str(self.m),
            repr(float(self.e_inf)),
            repr(float(self.z_score)),
            repr(float(self.sigma_hat)),
            f"{self.runtime_seconds:.3f}",
            str(self.f_evals),
            str(self.g_evals),
            str(self.h_evals),
            str(self.jitter_events),
        )
