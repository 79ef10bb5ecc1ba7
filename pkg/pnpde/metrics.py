import math
from collections import defaultdict
from dataclasses import dataclass
from logging import getLogger
from typing import Dict, List, Sequence

import numpy as np

from pnpde.exceptions import InsufficientRowsError
from pnpde.models import MetricRow, SolveReport
from pnpde.operators import trapezoid_weights

logger = getLogger("pnpde")

# Below this, an error at a zero-variance node counts as reproducing an
# assimilated constraint
EXACT_NODE_ATOL = 1e-12

# Fewest sweep rows a convergence slope is fitted to
MIN_SLOPE_ROWS = 3


def _matching(*fields: np.ndarray) -> List[np.ndarray]:
    arrays = [np.asarray(f, dtype=float) for f in fields]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"Field shapes do not match: {sorted(shapes)}")
    if not arrays[0].size:
        raise ValueError("Fields are empty")
    return arrays


def sup_error(mean_field: np.ndarray, truth_field: np.ndarray) -> float:
    """Largest absolute difference between two fields on the grid."""
    mean, truth = _matching(mean_field, truth_field)
    return float(np.max(np.abs(mean - truth)))


@dataclass(frozen=True)
class ZScore:
    """A Z-score with the bookkeeping behind it: nodes whose denominator was
    raised to the floor, nodes skipped as exactly reproduced constraints,
    and whether the value is the +inf sentinel of a zero amplitude."""

    value: float
    clipped: int = 0
    skipped: int = 0
    degenerate: bool = False


def z_score_details(
    mean_field: np.ndarray,
    unit_std_field: np.ndarray,
    sigma_hat: float,
    truth_field: np.ndarray,
    floor: float = 1e-6,
) -> ZScore:
    """Largest error in units of the posterior standard deviation,

        max |mean - truth| / max(sigma_hat * std, floor * sigma_hat * max std).

    Args:
        mean_field: Posterior mean on the grid.
        unit_std_field: Posterior std at unit amplitude on the grid.
        sigma_hat: Amplitude estimate.
        truth_field: True solution on the grid.
        floor: Relative floor of the denominator.
    """
    mean, std, truth = _matching(mean_field, unit_std_field, truth_field)
    if np.any(std < 0):
        raise ValueError("Standard deviations must be nonnegative")
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    if not sigma_hat >= 0:
        raise ValueError(f"sigma_hat must be nonnegative, got {sigma_hat}")

    error = np.abs(mean - truth)
    skip = (std == 0) & (error < EXACT_NODE_ATOL)
    scaled = sigma_hat * std
    denominator = np.maximum(scaled, floor * sigma_hat * float(std.max()))
    kept = ~skip
    clipped = int(np.sum(kept & (scaled < denominator)))

    if np.any(kept & (denominator == 0) & (error > 0)):
        logger.warning(
            "Zero posterior spread with a nonzero error of %.3g",
            float(error[kept].max()),
        )
        return ZScore(math.inf, clipped, int(skip.sum()), degenerate=True)
    valid = kept & (denominator > 0)
    value = float(np.max(error[valid] / denominator[valid], initial=0.0))
    return ZScore(value, clipped, int(skip.sum()))


def z_score(
    mean_field: np.ndarray,
    unit_std_field: np.ndarray,
    sigma_hat: float,
    truth_field: np.ndarray,
    floor: float = 1e-6,
) -> float:
    """See `z_score_details`."""
    return z_score_details(
        mean_field, unit_std_field, sigma_hat, truth_field, floor
    ).value


def convergence_slopes(
    rows: Sequence[MetricRow], axis: str = "n"
) -> Dict[int, float]:
    """Least-squares slope of log e_inf against log(axis size), one fit per
    value of the other axis that has at least three rows.

    Returns:
        Map from the fixed size of the other axis to the fitted slope.
    """
    if axis not in ("n", "m"):
        raise ValueError(f"axis must be 'n' or 'm', got {axis!r}")
    other = "m" if axis == "n" else "n"
    groups: Dict[int, List[MetricRow]] = defaultdict(list)
    for row in rows:
        groups[getattr(row, other)].append(row)

    slopes = {}
    for fixed, group in sorted(groups.items()):
        sizes = sorted({getattr(row, axis) for row in group})
        if len(sizes) < MIN_SLOPE_ROWS:
            continue
        sizes_arr = np.array([getattr(row, axis) for row in group], float)
        errors = np.array([row.e_inf for row in group], dtype=float)
        if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
            raise ValueError(
                f"Cannot fit a log-log slope through errors {errors}"
            )
        slope, _ = np.polyfit(np.log(sizes_arr), np.log(errors), 1)
        slopes[fixed] = float(slope)
    if not slopes:
        raise InsufficientRowsError(
            f"Need at least {MIN_SLOPE_ROWS} values of {axis} per fit"
        )
    return slopes


def mass_drift(
    mean_field: np.ndarray,
    x_nodes: Sequence[float],
    reference_mass: float,
) -> float:
    """Largest drift of the trapezoidal mass over the time levels, relative
    to reference_mass (absolute if the reference mass is zero)."""
    masses = np.asarray(mean_field, dtype=float) @ trapezoid_weights(x_nodes)
    drift = float(np.max(np.abs(masses - reference_mass)))
    return drift / abs(reference_mass) if reference_mass else drift


def metric_row(
    report: SolveReport,
    truth_field: np.ndarray,
    floor: float = 1e-6,
    record_runtime: bool = True,
) -> MetricRow:
    """Summarise a solve against the truth on its grid. The Z-score and
    E-infinity values are also stored on report.metrics."""
    e_inf = sup_error(report.mean_field, truth_field)
    z = z_score_details(
        report.mean_field,
        report.unit_std_field,
        report.sigma_hat,
        truth_field,
        floor,
    )
    report.metrics.update(
        {
            "e_inf": e_inf,
            "z": z.value,
            "z_clipped": z.clipped,
            "z_skipped": z.skipped,
            "z_degenerate": z.degenerate,
        }
    )
    n, m = report.grid.shape
    return MetricRow(
        n=n,
        m=m,
        e_inf=e_inf,
        z_score=z.value,
        sigma_hat=report.sigma_hat,
        runtime_seconds=report.runtime_seconds if record_runtime else 0.0,
        f_evals=report.cost.f,
        g_evals=report.cost.g,
        h_evals=report.cost.h,
        jitter_events=len(report.jitter_events),
    )
