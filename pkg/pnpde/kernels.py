import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial

from pnpde.exceptions import (
    InsufficientSmoothnessError,
    UnsupportedSmoothnessError,
)


# Largest supported Matérn index p (nu = p + 1/2). Fourth-order spatial
# derivatives of the 5/2 kernel are the most this package ever needs.
MAX_MATERN_INDEX = 3

# Highest derivative order implemented for the rational quadratic kernel.
RATIONAL_QUADRATIC_MAX_ORDER = 4

Scalar = Union[float, np.ndarray]
Orders = Tuple[int, ...]


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")


def matern_coeffs(p: int, sigma: float = 1.0, rho: float = 1.0) -> List[float]:
    """Polynomial coefficients a_0..a_p of the half-integer Matérn kernel

        K(h) = exp(-|h|/rho) * sum_k a_k |h|^k,  nu = p + 1/2.

    Args:
        p: Smoothness index, 0 <= p <= 3.
        sigma: Amplitude; a_0 equals sigma**2.
        rho: Length-scale.

    Returns:
        The list [a_0, ..., a_p].
    """
    if not isinstance(p, (int, np.integer)) or p < 0:
        raise UnsupportedSmoothnessError(
            f"Matérn index must be a nonnegative integer, got {p!r}"
        )
    if p > MAX_MATERN_INDEX:
        raise UnsupportedSmoothnessError(
            f"Matérn index p={p} is not supported (max {MAX_MATERN_INDEX})"
        )
    _check_positive(sigma=sigma, rho=rho)
    prefactor = sigma**2 * math.factorial(p) / math.factorial(2 * p)
    return [
        prefactor
        * math.factorial(2 * p - k)
        / (math.factorial(p - k) * math.factorial(k))
        * (2.0 / rho) ** k
        for k in range(p + 1)
    ]


def _check_order(kernel: "UnivariateKernel", order: int) -> None:
    if order < 0:
        raise ValueError(f"Derivative order must be nonnegative, got {order}")
    if order > kernel.max_order:
        raise InsufficientSmoothnessError(
            f"{kernel!r} has no derivative of order {order} "
            f"(max {kernel.max_order})"
        )


def _as_output(value: np.ndarray) -> Scalar:
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class MaternHalfInteger:
    """Matérn kernel with nu = p + 1/2, evaluated together with its
    derivatives up to order 2p. Derivatives are held as polynomials P_q so
    that, for h >= 0, K^(q)(h) = exp(-h/rho) P_q(h); negative lags follow
    from K being even."""

    p: int
    sigma: float = 1.0
    rho: float = 1.0
    _polys: Tuple[Polynomial, ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        poly = Polynomial(matern_coeffs(self.p, self.sigma, self.rho))
        polys = [poly]
        for _ in range(2 * self.p):
            poly = poly.deriv() - poly / self.rho
            polys.append(poly)
        # use setattr because this class is frozen
        object.__setattr__(self, "_polys", tuple(polys))

    @property
    def nu(self) -> float:
        return self.p + 0.5

    @property
    def max_order(self) -> int:
        return 2 * self.p

    def deriv(self, order: int, h: Scalar) -> Scalar:
        """Return d^order K / dh^order at lag h (scalar or array)."""
        _check_order(self, order)
        h = np.asarray(h, dtype=float)
        r = np.abs(h)
        value = np.exp(-r / self.rho) * self._polys[order](r)
        if order % 2:
            # np.sign(0) == 0, so odd derivatives vanish exactly at h = 0
            value = np.sign(h) * value
        return _as_output(value)


@dataclass(frozen=True)
class RationalQuadratic:
    """Rational quadratic kernel C(h) = sigma * (1 + h^2/rho^2)^-1.

    The amplitude enters linearly (sigma, not sigma^2); the amplitude
    estimate absorbs the difference."""

    sigma: float = 1.0
    rho: float = math.sqrt(3.0)
    _numerators: Tuple[Polynomial, ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        _check_positive(sigma=self.sigma, rho=self.rho)
        # q-th derivative of 1/(1+u^2) is N_q(u) / (1+u^2)^(q+1)
        one_plus_u2 = Polynomial([1.0, 0.0, 1.0])
        u = Polynomial([0.0, 1.0])
        numerator = Polynomial([1.0])
        numerators = [numerator]
        for q in range(RATIONAL_QUADRATIC_MAX_ORDER):
            numerator = (
                numerator.deriv() * one_plus_u2 - 2 * (q + 1) * u * numerator
            )
            numerators.append(numerator)
        object.__setattr__(self, "_numerators", tuple(numerators))

    @property
    def max_order(self) -> int:
        return RATIONAL_QUADRATIC_MAX_ORDER

    def deriv(self, order: int, h: Scalar) -> Scalar:
        """Return d^order C / dh^order at lag h (scalar or array)."""
        _check_order(self, order)
        u = np.asarray(h, dtype=float) / self.rho
        value = (
            self.sigma
            * self._numerators[order](u)
            / (1.0 + u**2) ** (order + 1)
            / self.rho**order
        )
        return _as_output(value)


UnivariateKernel = Union[MaternHalfInteger, RationalQuadratic]


def univariate_deriv(
    kernel: UnivariateKernel, order: int, h: Scalar
) -> Scalar:
    """Evaluate the order-th derivative of a univariate kernel at lag h.

    Raises:
        InsufficientSmoothnessError: If the kernel is not `order` times
            differentiable at the origin.
    """
    return kernel.deriv(order, h)


@dataclass(frozen=True)
class TensorKernel:
    """Product kernel Sigma(r, s) = prod_i K_i(r_i - s_i), one factor per
    input dimension. Here the dimensions are (t, x)."""

    factors: Tuple[UnivariateKernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("TensorKernel needs at least one factor")

    @property
    def budget(self) -> Orders:
        """Highest derivative order per dimension that a functional may
        apply, so that its variance exists."""
        return tuple(factor.max_order // 2 for factor in self.factors)

    def supports(self, orders: Sequence[int]) -> bool:
        return all(o <= b for o, b in zip(orders, self.budget))

    def cross_cov(
        self,
        left_orders: Sequence[int],
        right_orders: Sequence[int],
        r: Sequence[Scalar],
        s: Sequence[Scalar],
    ) -> Scalar:
        """Mixed partial derivative of Sigma(r, s): left_orders act on r,
        right_orders on s. Coordinates may be broadcastable arrays."""
        if not (
            len(left_orders)
            == len(right_orders)
            == len(r)
            == len(s)
            == len(self.factors)
        ):
            raise ValueError(
                f"Expected {len(self.factors)} orders and coordinates per "
                "argument"
            )
        value: Scalar = 1.0
        for factor, a, c, zr, zs in zip(
            self.factors, left_orders, right_orders, r, s
        ):
            term = factor.deriv(a + c, np.subtract(zr, zs))
            # each derivative in the second argument flips the sign
            value = value * (-term if c % 2 else term)
        return value


def tensor_cross_cov(
    kernel: TensorKernel,
    left_orders: Sequence[int],
    right_orders: Sequence[int],
    r: Sequence[Scalar],
    s: Sequence[Scalar],
) -> Scalar:
    """Return d^a_t d^a_x d^c_t' d^c_x' Sigma(r, s).

    Args:
        kernel: The tensor-product kernel.
        left_orders: Derivative orders (a_t, a_x) applied to r.
        right_orders: Derivative orders (c_t, c_x) applied to s.
        r: The point (t, x).
        s: The point (t', x').

    Returns:
        The cross-covariance, with the shape of the broadcast coordinates.
    """
    return kernel.cross_cov(left_orders, right_orders, r, s)
