import math
import threading
from dataclasses import dataclass, field
from logging import getLogger
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from pnpde.exceptions import NonFiniteEvaluationError
from pnpde.models import DiffTerm, EvalCounts, Grid, LinearisationKind

logger = getLogger("pnpde")

TruthFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Tolerance for g and h agreeing at the space-time corners
COMPATIBILITY_ATOL = 1e-8


@dataclass
class CountedFunction:
    """A black-box callable that counts its evaluations. With memoisation
    on, repeated calls at the same node are served from a cache and counted
    once, so evaluation budgets can be compared exactly."""

    func: Callable[..., float]
    name: str
    memoise: bool = True
    count: int = 0
    _cache: Dict[Tuple[float, ...], float] = field(
        default_factory=dict, repr=False
    )
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def __call__(self, *node: float) -> float:
        key = tuple(float(v) for v in node)
        if self.memoise:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]
        value = float(self.func(*key))
        if not math.isfinite(value):
            raise NonFiniteEvaluationError(self.name, key, value)
        with self._lock:
            if not self.memoise:
                self.count += 1
            elif key not in self._cache:
                self._cache[key] = value
                self.count += 1
        return value

    def many(self, nodes: Sequence[Tuple[float, ...]]) -> np.ndarray:
        """Evaluate at several nodes, in order."""
        return np.array([self(*node) for node in nodes], dtype=float)

    def reset(self) -> None:
        with self._lock:
            self.count = 0
            self._cache.clear()

    def clone(self, memoise: Optional[bool] = None) -> "CountedFunction":
        """A fresh counter around the same callable."""
        if memoise is None:
            memoise = self.memoise
        return CountedFunction(self.func, self.name, memoise)


@dataclass
class PDEProblem:
    """An initial-boundary value problem

        D u = f on [t_start, t_end] x (x_left, x_right),
        u(t_start, x) = g(x),  u(t, x) = h(t, x) on the x boundary,

    with D = P + q_scale * Q: P is the constant-coefficient linear part and
    Q the nonlinear part handled by a linearisation strategy."""

    name: str
    t_span: Tuple[float, float]
    x_span: Tuple[float, float]
    f: CountedFunction
    g: CountedFunction
    h: CountedFunction
    p_terms: Tuple[DiffTerm, ...]
    strategy_hint: LinearisationKind
    q_scale: float = 1.0
    truth: Optional[TruthFunction] = None
    params: Dict[str, float] = field(default_factory=dict)

    def grid(self, n: int, m: int) -> Grid:
        return Grid.uniform(self.t_span, self.x_span, n, m)

    def clone(self, memoise: Optional[bool] = None) -> "PDEProblem":
        """Copy with fresh evaluation counters. Fine reference grids turn
        memoisation off to keep the caches from growing with the grid."""
        return PDEProblem(
            self.name,
            self.t_span,
            self.x_span,
            self.f.clone(memoise),
            self.g.clone(memoise),
            self.h.clone(memoise),
            self.p_terms,
            self.strategy_hint,
            self.q_scale,
            self.truth,
            dict(self.params),
        )

    @property
    def diffusivity(self) -> float:
        """alpha if P = d_t - alpha d_x^2, else 0."""
        return -sum(
            term.coeff for term in self.p_terms if term.orders == (0, 2)
        )


def eval_counts(problem: PDEProblem) -> EvalCounts:
    """Number of f, g and h evaluations since construction or reset."""
    return EvalCounts(problem.f.count, problem.g.count, problem.h.count)


def reset_counts(problem: PDEProblem) -> None:
    for func in (problem.f, problem.g, problem.h):
        func.reset()


def check_compatibility(
    problem: PDEProblem, atol: float = COMPATIBILITY_ATOL
) -> bool:
    """Do g and h agree at the corners (t_start, x_left/x_right)? Uses the
    raw callables, so no evaluations are counted."""
    t0 = problem.t_span[0]
    compatible = True
    for x in problem.x_span:
        g_value = problem.g.func(x)
        h_value = problem.h.func(t0, x)
        if abs(g_value - h_value) > atol:
            logger.warning(
                "%s: g(%s)=%s and h(%s, %s)=%s disagree",
                problem.name,
                x,
                g_value,
                t0,
                x,
                h_value,
            )
            compatible = False
    return compatible


def _heat_terms(alpha: float) -> Tuple[DiffTerm, ...]:
    return (DiffTerm(1.0, (1, 0)), DiffTerm(-alpha, (0, 2)))


def _zero(*_: float) -> float:
    return 0.0


def burgers_homogeneous(
    alpha: float = 0.02,
    a: float = 1.0,
    b: float = 2.0,
    k: float = 1.0,
    t_end: float = 30.0,
    length: float = 2 * math.pi,
) -> PDEProblem:
    """u_t + u u_x - alpha u_xx = 0 on [0, t_end] x [0, length], with the
    closed-form solution

        u(t, x) = 2 alpha a k e^(-alpha k^2 t) sin(kx)
                  / (b + a e^(-alpha k^2 t) cos(kx)).
    """

    def truth(t, x):
        decay = a * np.exp(-alpha * k**2 * np.asarray(t, dtype=float))
        return (
            2 * alpha * k * decay * np.sin(k * x) / (b + decay * np.cos(k * x))
        )

    def g(x):
        return float(truth(0.0, x))

    def h(t, x):
        return float(truth(t, x))

    return PDEProblem(
        name="burgers",
        t_span=(0.0, t_end),
        x_span=(0.0, length),
        f=CountedFunction(_zero, "f"),
        g=CountedFunction(g, "g"),
        h=CountedFunction(h, "h"),
        p_terms=_heat_terms(alpha),
        strategy_hint=LinearisationKind.LAG_MEAN,
        q_scale=1.0,
        truth=truth,
        params={"alpha": alpha, "a": a, "b": b, "k": k, "T": t_end},
    )


def barenblatt(t, x):
    """Barenblatt solution of u_t = (u^2)_xx."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.maximum(
        0.0, t ** (-1 / 3) * (1 - x**2 / (12 * t ** (2 / 3)))
    )


# Mass of the Barenblatt profile, 4 (3^(1/2) - 3^(-1/2)) = 8 / sqrt(3)
BARENBLATT_MASS = 8 / math.sqrt(3)


def porous_medium(
    t0: float = 2.0, duration: float = 8.0, half_width: float = 10.0
) -> PDEProblem:
    """u_t - (u^2)_xx = 0, expanded as u_t - 2 u_x^2 - 2 u u_xx = 0, on
    [t0, t0 + duration] x [-half_width, half_width]. P = d_t and the
    nonlinear part Q u = u_x^2 + u u_xx enters with scale -2."""

    def g(x):
        return float(barenblatt(t0, x))

    return PDEProblem(
        name="porous",
        t_span=(t0, t0 + duration),
        x_span=(-half_width, half_width),
        f=CountedFunction(_zero, "f"),
        g=CountedFunction(g, "g"),
        h=CountedFunction(_zero, "h"),
        p_terms=(DiffTerm(1.0, (1, 0)),),
        strategy_hint=LinearisationKind.POROUS_Q1,
        q_scale=-2.0,
        truth=barenblatt,
        params={
            "k": 2.0,
            "t0": t0,
            "T": duration,
            "L": 2 * half_width,
            "mass": BARENBLATT_MASS,
        },
    )


def burgers_forced(
    alpha: float = 1.0,
    t_end: float = 30.0,
    length: float = 1.0,
    forcing_scale: float = 1.0,
) -> PDEProblem:
    """u_t + u u_x - alpha u_xx = f with zero initial and boundary data and
    an oscillatory, non-smooth forcing. There is no closed-form truth; use
    `pnpde.baselines.reference_solution`."""

    def f(t, x):
        return forcing_scale * (
            10 * math.sin(6 * math.pi * x) * math.cos(3 * math.pi * t)
            + 2 * abs(math.sin(3 * math.pi * x) * math.cos(6 * math.pi * t))
        )

    return PDEProblem(
        name="burgers_forced",
        t_span=(0.0, t_end),
        x_span=(0.0, length),
        f=CountedFunction(f, "f"),
        g=CountedFunction(_zero, "g"),
        h=CountedFunction(_zero, "h"),
        p_terms=_heat_terms(alpha),
        strategy_hint=LinearisationKind.LAG_MEAN,
        q_scale=1.0,
        truth=None,
        # shortest period of the forcing, from cos(6 pi t)
        params={"alpha": alpha, "T": t_end, "L": length, "period": 1 / 3},
    )


def heat_equation(
    alpha: float = 1.0,
    amplitude: float = 1.0,
    length: float = 1.0,
    t_end: float = 1.0,
) -> PDEProblem:
    """u_t - alpha u_xx = 0 with g = amplitude sin(pi x / length) and zero
    boundary data. With amplitude 0 every datum, and the truth, is zero."""
    rate = alpha * (math.pi / length) ** 2

    def truth(t, x):
        t = np.asarray(t, dtype=float)
        return amplitude * np.exp(-rate * t) * np.sin(math.pi * x / length)

    def g(x):
        return float(truth(0.0, x))

    return PDEProblem(
        name="heat",
        t_span=(0.0, t_end),
        x_span=(0.0, length),
        f=CountedFunction(_zero, "f"),
        g=CountedFunction(g, "g"),
        h=CountedFunction(_zero, "h"),
        p_terms=_heat_terms(alpha),
        strategy_hint=LinearisationKind.LINEAR,
        q_scale=0.0,
        truth=truth,
        params={"alpha": alpha, "amplitude": amplitude, "T": t_end},
    )


problems_lookup: Dict[str, Callable[..., PDEProblem]] = {
    "burgers": burgers_homogeneous,
    "porous": porous_medium,
    "burgers_forced": burgers_forced,
    "heat": heat_equation,
}


def get_problem(name: str, **overrides: float) -> PDEProblem:
    """Build a benchmark problem by its identifier, overriding constants
    by keyword."""
    if name not in problems_lookup:
        raise ValueError(
            f"Unknown problem {name!r}; expected one of "
            f"{list(problems_lookup.keys())}"
        )
    return problems_lookup[name](**overrides)
