from collections import defaultdict
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from scipy import sparse

from pnpde.exceptions import InsufficientSmoothnessError
from pnpde.kernels import TensorKernel
from pnpde.models import DiffTerm, Point

Orders = Tuple[int, int]

# A field evaluated with derivatives: field(t, x, orders) -> values, where
# t and x are broadcastable arrays.
FieldFunction = Callable[[np.ndarray, np.ndarray, Orders], np.ndarray]


@dataclass(frozen=True)
class Atom:
    """A differential operator applied at one anchor point, with a weight."""

    anchor: Point
    terms: Tuple[DiffTerm, ...]
    weight: float = 1.0

    def __post_init__(self):
        # use setattr because this class is frozen
        object.__setattr__(
            self, "anchor", (float(self.anchor[0]), float(self.anchor[1]))
        )
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class LinearFunctional:
    """A finite weighted sum of point-anchored differential operators,
    u -> sum_atoms weight * sum_terms coeff * d^orders u(anchor)."""

    atoms: Tuple[Atom, ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def __add__(self, other: "LinearFunctional") -> "LinearFunctional":
        return LinearFunctional(self.atoms + other.atoms)

    def __mul__(self, alpha: float) -> "LinearFunctional":
        return self.scaled(alpha)

    __rmul__ = __mul__

    def scaled(self, alpha: float) -> "LinearFunctional":
        return LinearFunctional(
            tuple(
                Atom(a.anchor, a.terms, a.weight * alpha) for a in self.atoms
            )
        )

    def rows(self) -> Iterator[Tuple[float, float, Orders, float]]:
        """Yield (t, x, orders, weight * coeff) for every atom term."""
        for atom in self.atoms:
            t, x = atom.anchor
            for term in atom.terms:
                yield t, x, term.orders, atom.weight * term.coeff

    @property
    def max_orders(self) -> Orders:
        orders = [term.orders for a in self.atoms for term in a.terms]
        if not orders:
            return (0, 0)
        return (max(o[0] for o in orders), max(o[1] for o in orders))

    def evaluate(self, u: FieldFunction) -> float:
        """Apply the functional to a field."""
        return float(evaluate_functionals([self], u)[0])


def point_eval(z: Point) -> LinearFunctional:
    """The functional u -> u(z)."""
    return LinearFunctional((Atom(z, (DiffTerm(1.0, (0, 0)),)),))


def operator_at(terms: Sequence[DiffTerm], z: Point) -> LinearFunctional:
    """The functional u -> sum_terms coeff * d^a_t d^a_x u(z)."""
    return LinearFunctional((Atom(z, tuple(terms)),))


def trapezoid_weights(x_nodes: Sequence[float]) -> np.ndarray:
    """Trapezoidal-rule weights for strictly increasing nodes."""
    x = np.asarray(x_nodes, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("Quadrature needs at least 2 nodes")
    if np.any(np.diff(x) <= 0):
        raise ValueError("Quadrature nodes must be strictly increasing")
    weights = np.empty_like(x)
    weights[0] = (x[1] - x[0]) / 2
    weights[-1] = (x[-1] - x[-2]) / 2
    weights[1:-1] = (x[2:] - x[:-2]) / 2
    return weights


def quadrature_functional(
    x_nodes: Sequence[float], t_anchor: float
) -> LinearFunctional:
    """Trapezoidal approximation of u -> integral of u(t_anchor, x) dx
    over [x_nodes[0], x_nodes[-1]]."""
    weights = trapezoid_weights(x_nodes)
    identity = (DiffTerm(1.0, (0, 0)),)
    return LinearFunctional(
        tuple(
            Atom((t_anchor, x), identity, w) for x, w in zip(x_nodes, weights)
        )
    )


@dataclass
class _TermGroup:
    """Rows of a TermTable that share the same derivative orders."""

    owner: np.ndarray
    t: np.ndarray
    x: np.ndarray
    coeff: np.ndarray
    _aggregator: Optional[sparse.csr_matrix] = field(
        default=None, repr=False
    )

    def aggregator(self, size: int) -> sparse.csr_matrix:
        """Sparse (size x rows) matrix summing weighted rows into their
        owning functional."""
        agg = self._aggregator
        if agg is None or agg.shape[0] != size:
            agg = sparse.csr_matrix(
                (self.coeff, (self.owner, np.arange(len(self.owner)))),
                shape=(size, len(self.owner)),
            )
            self._aggregator = agg
        return agg


@dataclass
class TermTable:
    """A list of functionals flattened into per-orders arrays, so kernel
    blocks can be evaluated with vectorised numpy calls."""

    size: int = 0
    groups: Dict[Orders, _TermGroup] = field(default_factory=dict)

    @classmethod
    def from_functionals(
        cls, functionals: Iterable[LinearFunctional]
    ) -> "TermTable":
        table = cls()
        table.extend(functionals)
        return table

    def extend(self, functionals: Iterable[LinearFunctional]) -> None:
        """Append functionals, numbering them after the existing ones."""
        rows: Dict[Orders, List[Tuple[int, float, float, float]]]
        rows = defaultdict(list)
        count = 0
        for i, functional in enumerate(functionals, start=self.size):
            for t, x, orders, coeff in functional.rows():
                rows[orders].append((i, t, x, coeff))
            count += 1
        for orders, new in rows.items():
            owner, t, x, coeff = (np.array(col) for col in zip(*new))
            owner = owner.astype(int)
            group = self.groups.get(orders)
            if group is None:
                self.groups[orders] = _TermGroup(owner, t, x, coeff)
            else:
                self.groups[orders] = _TermGroup(
                    np.concatenate([group.owner, owner]),
                    np.concatenate([group.t, t]),
                    np.concatenate([group.x, x]),
                    np.concatenate([group.coeff, coeff]),
                )
        self.size += count

    @property
    def max_orders(self) -> Orders:
        if not self.groups:
            return (0, 0)
        return (
            max(o[0] for o in self.groups),
            max(o[1] for o in self.groups),
        )


def check_budget(kernel: TensorKernel, table: TermTable) -> None:
    """Raise if any functional differentiates beyond the kernel budget."""
    for orders in table.groups:
        if not kernel.supports(orders):
            raise InsufficientSmoothnessError(
                f"Derivative orders {orders} exceed the smoothness budget "
                f"{kernel.budget} of the prior"
            )


def cross_cov_tables(
    kernel: TensorKernel, left: TermTable, right: TermTable
) -> np.ndarray:
    """Matrix of cross-covariances between two flattened functional
    lists, shape (left.size, right.size)."""
    out = np.zeros((left.size, right.size))
    if not left.size or not right.size:
        return out
    for left_orders, lg in left.groups.items():
        left_agg = lg.aggregator(left.size)
        for right_orders, rg in right.groups.items():
            block = kernel.cross_cov(
                left_orders,
                right_orders,
                (lg.t[:, None], lg.x[:, None]),
                (rg.t[None, :], rg.x[None, :]),
            )
            partial = left_agg @ np.asarray(block)
            out += (rg.aggregator(right.size) @ partial.T).T
    return out


def cross_cov_matrix(
    kernel: TensorKernel,
    left: Sequence[LinearFunctional],
    right: Sequence[LinearFunctional],
) -> np.ndarray:
    """Vectorised `functional_cross_cov` over two lists of functionals."""
    return cross_cov_tables(
        kernel,
        TermTable.from_functionals(left),
        TermTable.from_functionals(right),
    )


def cross_cov_diagonal(
    kernel: TensorKernel, functionals: Sequence[LinearFunctional]
) -> np.ndarray:
    """Prior variance of each functional, without forming the full Gram
    matrix."""
    pairs: Dict[Tuple[Orders, Orders], List[Tuple[int, ...]]]
    pairs = defaultdict(list)
    for i, functional in enumerate(functionals):
        rows = list(functional.rows())
        for t1, x1, o1, c1 in rows:
            for t2, x2, o2, c2 in rows:
                pairs[(o1, o2)].append((i, t1, x1, t2, x2, c1 * c2))
    out = np.zeros(len(functionals))
    for (o1, o2), entries in pairs.items():
        owner, t1, x1, t2, x2, coeff = (np.array(c) for c in zip(*entries))
        values = kernel.cross_cov(o1, o2, (t1, x1), (t2, x2))
        np.add.at(out, owner.astype(int), coeff * values)
    return out


def functional_cross_cov(
    kernel: TensorKernel, left: LinearFunctional, right: LinearFunctional
) -> float:
    """Covariance of left(U) and right(U) for U ~ GP(0, kernel), i.e. the
    bilinear expansion of the kernel over both functionals' terms."""
    return float(cross_cov_matrix(kernel, [left], [right])[0, 0])


def evaluate_table(table: TermTable, u: FieldFunction) -> np.ndarray:
    """Apply every functional of a table to the field u."""
    out = np.zeros(table.size)
    for orders, group in table.groups.items():
        values = np.broadcast_to(
            np.asarray(u(group.t, group.x, orders), dtype=float),
            group.t.shape,
        )
        out += group.aggregator(table.size) @ values
    return out


def evaluate_functionals(
    functionals: Sequence[LinearFunctional], u: FieldFunction
) -> np.ndarray:
    return evaluate_table(TermTable.from_functionals(functionals), u)


def zero_mean(t: np.ndarray, x: np.ndarray, orders: Orders) -> np.ndarray:
    """The zero field, with all of its derivatives."""
    return np.zeros(np.broadcast(t, x).shape)


def as_field(
    u: Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> FieldFunction:
    """Wrap a plain vectorised u(t, x) as a field that only supports point
    evaluation."""

    def field_function(t, x, orders):
        if tuple(orders) != (0, 0):
            raise InsufficientSmoothnessError(
                f"Field {u!r} only supports point evaluation, "
                f"not derivatives {orders}"
            )
        return u(t, x)

    return field_function
