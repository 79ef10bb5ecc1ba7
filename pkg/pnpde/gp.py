"""Gaussian process conditioning on exact linear-functional observations.

The state keeps the Cholesky factor L of the Gram matrix of everything
assimilated so far, together with alpha = L^-1 (y - prior applied). A new
batch B extends the factor blockwise:

    L_new = [[L, 0], [C^T, L_B]],  C = L^-1 K(history, B),
    L_B L_B^T = K(B, B) - C^T C,

so assimilating b observations after N costs O(N^2 b + b^3). The
conditional block K(B, B) - C^T C is the predictive covariance of the
batch, which also yields the batch's Mahalanobis norm for the amplitude
estimate.

A GPState has a single writer. Once no longer assimilated into, it may be
shared by any number of threads for prediction.
"""

import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from pnpde.exceptions import (
    IllConditionedAssimilationError,
    InsufficientRowsError,
    NonFiniteEvaluationError,
)
from pnpde.kernels import TensorKernel
from pnpde.models import JitterEvent, JitterPolicy, MLENormalisation
from pnpde.operators import (
    FieldFunction,
    LinearFunctional,
    TermTable,
    check_budget,
    cross_cov_diagonal,
    cross_cov_tables,
    evaluate_table,
    zero_mean,
)

logger = getLogger("pnpde")

Observation = Tuple[LinearFunctional, float]

# Functionals per chunk when predicting marginal variances, to bound the
# size of the history x chunk cross-covariance matrix.
PREDICT_CHUNK = 512


@dataclass
class GPState:
    """Prior GP(prior_mean, kernel) conditioned on the observations so far.
    The kernel is used at unit amplitude; covariances are rescaled by the
    amplitude estimate afterwards."""

    prior_mean: FieldFunction
    kernel: TensorKernel
    jitter_policy: JitterPolicy = field(default_factory=JitterPolicy)
    observations: List[Observation] = field(default_factory=list)
    mle_terms: List[float] = field(default_factory=list)
    mle_counts: List[int] = field(default_factory=list)
    jitter_events: List[JitterEvent] = field(default_factory=list)
    table: TermTable = field(default_factory=TermTable, repr=False)
    _factor: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0)), repr=False
    )
    _alpha: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def size(self) -> int:
        return len(self.observations)

    @property
    def gram_factor(self) -> np.ndarray:
        """Lower-triangular Cholesky factor of the observation Gram matrix."""
        return self._factor[: self.size, : self.size]

    @property
    def residual_solve(self) -> np.ndarray:
        """L^-1 (observed values - prior mean applied)."""
        return self._alpha[: self.size]

    def _reserve(self, total: int) -> None:
        capacity = len(self._alpha)
        if total <= capacity:
            return
        capacity = max(total, 2 * capacity, 64)
        factor = np.zeros((capacity, capacity))
        alpha = np.zeros(capacity)
        n = self.size
        factor[:n, :n] = self.gram_factor
        alpha[:n] = self.residual_solve
        self._factor, self._alpha = factor, alpha

    def _condition(self, table: TermTable) -> Tuple[np.ndarray, np.ndarray]:
        """Return (posterior means, C = L^-1 K(history, table))."""
        check_budget(self.kernel, table)
        means = evaluate_table(table, self.prior_mean)
        if not self.size:
            return means, np.zeros((0, table.size))
        cross = cross_cov_tables(self.kernel, self.table, table)
        c = solve_triangular(
            self.gram_factor, cross, lower=True, check_finite=False
        )
        return means + c.T @ self.residual_solve, c

    def _factorise(
        self, conditional: np.ndarray, scale: float, step: Optional[int]
    ) -> np.ndarray:
        size = len(conditional)
        levels = self.jitter_policy.levels()
        if not (scale > 0 and math.isfinite(scale)):
            raise IllConditionedAssimilationError(step, 0.0, size)
        identity = np.eye(size)
        for k, level in enumerate(levels):
            jitter = level * scale
            try:
                factor = cholesky(
                    conditional + jitter * identity,
                    lower=True,
                    check_finite=False,
                )
            except LinAlgError:
                continue
            if not np.all(np.isfinite(factor)):
                continue
            if k:
                event = JitterEvent(step, jitter, size)
                self.jitter_events.append(event)
                logger.warning(
                    "Jitter escalated to %.3g for %d observations at %s",
                    jitter,
                    size,
                    "initial data" if step is None else f"step {step}",
                )
            return factor
        raise IllConditionedAssimilationError(step, levels[-1] * scale, size)


def gp_init(
    prior_mean: FieldFunction = zero_mean,
    kernel: Optional[TensorKernel] = None,
    jitter_policy: Optional[JitterPolicy] = None,
) -> GPState:
    """Start from the prior GP(prior_mean, kernel) with no observations.

    Args:
        prior_mean: Field callable (t, x, orders) -> values.
        kernel: Covariance at unit amplitude.
        jitter_policy: Conditioning aid for the Cholesky factorisations.
    """
    if kernel is None:
        raise ValueError("gp_init needs a kernel")
    return GPState(
        prior_mean=prior_mean,
        kernel=kernel,
        jitter_policy=jitter_policy or JitterPolicy(),
    )


def assimilate(
    state: GPState,
    batch: Iterable[Observation],
    step: Optional[int] = None,
    record_mle: bool = True,
) -> Tuple[GPState, float]:
    """Condition the state on exact observations lambda(U) = y.

    Args:
        state: The state to extend in place.
        batch: (functional, value) pairs.
        step: Time-step index, used in error messages and jitter events.
        record_mle: Whether to add the batch's Mahalanobis norm to the
            amplitude estimate.

    Returns:
        The updated state and the squared Mahalanobis norm of the batch
        residual under its predictive distribution given prior data.
    """
    batch = list(batch)
    if not batch:
        return state, 0.0
    functionals = [functional for functional, _ in batch]
    values = np.array([value for _, value in batch], dtype=float)
    for functional, value in zip(functionals, values):
        if not math.isfinite(value):
            raise NonFiniteEvaluationError(
                "observation", functional.atoms[0].anchor, value
            )

    table = TermTable.from_functionals(functionals)
    means, c = state._condition(table)
    prior_cov = cross_cov_tables(state.kernel, table, table)
    conditional = prior_cov - c.T @ c
    conditional = (conditional + conditional.T) / 2
    factor = state._factorise(
        conditional, float(np.mean(np.diag(prior_cov))), step
    )
    alpha = solve_triangular(
        factor, values - means, lower=True, check_finite=False
    )
    norm = float(alpha @ alpha)

    n, b = state.size, len(batch)
    state._reserve(n + b)
    state._factor[n : n + b, :n] = c.T
    state._factor[n : n + b, n : n + b] = factor
    state._alpha[n : n + b] = alpha
    state.table.extend(functionals)
    state.observations.extend(zip(functionals, values.tolist()))
    if record_mle:
        state.mle_terms.append(norm)
        state.mle_counts.append(b)
    logger.debug(
        "Assimilated %d observations (%s), Mahalanobis norm^2 %.6g",
        b,
        "initial data" if step is None else f"step {step}",
        norm,
    )
    return state, norm


def posterior_mean(
    state: GPState, functionals: Sequence[LinearFunctional]
) -> np.ndarray:
    """Posterior means only; skips every covariance computation."""
    functionals = list(functionals)
    if not functionals:
        return np.zeros(0)
    mean, _ = state._condition(TermTable.from_functionals(functionals))
    return mean


def predict(
    state: GPState,
    functionals: Sequence[LinearFunctional],
    diagonal: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means and covariance of the given functionals at unit
    amplitude; multiply the covariance by sigma_hat**2 to rescale.

    Args:
        state: The conditioned state.
        functionals: Functionals to predict.
        diagonal: If True, return marginal variances instead of the full
            covariance matrix (computed chunk by chunk).

    Returns:
        (means, covariance) or (means, variances).
    """
    functionals = list(functionals)
    if diagonal:
        means, variances = [np.zeros(0)], [np.zeros(0)]
        for start in range(0, len(functionals), PREDICT_CHUNK):
            chunk = functionals[start : start + PREDICT_CHUNK]
            mean, c = state._condition(TermTable.from_functionals(chunk))
            prior_var = cross_cov_diagonal(state.kernel, chunk)
            means.append(mean)
            variances.append(
                np.maximum(prior_var - np.sum(c**2, axis=0), 0.0)
            )
        return np.concatenate(means), np.concatenate(variances)

    if not functionals:
        return np.zeros(0), np.zeros((0, 0))
    table = TermTable.from_functionals(functionals)
    mean, c = state._condition(table)
    cov = cross_cov_tables(state.kernel, table, table) - c.T @ c
    return mean, (cov + cov.T) / 2


def amplitude_mle(
    state: GPState,
    n_steps: int,
    normalisation: MLENormalisation = MLENormalisation.PER_STEP,
) -> float:
    """Closed-form maximum likelihood amplitude from the recorded
    Mahalanobis norms of the differential data.

    PER_STEP divides their sum by the number of steps; PER_OBSERVATION by
    the total number of differential observations, which is the exact
    maximiser of the predictive likelihood.
    """
    if n_steps <= 0 or not state.mle_terms:
        raise InsufficientRowsError(
            "Amplitude estimate needs at least one recorded step"
        )
    if len(state.mle_terms) != n_steps:
        raise ValueError(
            f"Expected {n_steps} recorded steps, found "
            f"{len(state.mle_terms)}"
        )
    total = math.fsum(state.mle_terms)
    if MLENormalisation(normalisation) is MLENormalisation.PER_STEP:
        denominator = n_steps
    else:
        denominator = sum(state.mle_counts)
    return math.sqrt(total / denominator)


def condition_batch(
    prior_mean: FieldFunction,
    kernel: TensorKernel,
    observations: Sequence[Observation],
    jitter_policy: Optional[JitterPolicy] = None,
) -> GPState:
    """Condition the prior on all observations in a single batch."""
    state = gp_init(prior_mean, kernel, jitter_policy)
    assimilate(state, observations, record_mle=False)
    return state
