from typing import Optional, Tuple


class PnpdeError(ValueError):
    """Base class for all errors raised by pnpde. Subclasses ValueError so
    that callers catching the generic error keep working."""


class UnsupportedSmoothnessError(PnpdeError):
    """A Matérn index or prior smoothness outside the supported range."""


class InsufficientSmoothnessError(PnpdeError):
    """A derivative was requested that the kernel does not possess."""


class StrategyMismatchError(PnpdeError):
    """Linearisation inputs do not fit the requested strategy."""


class InsufficientRowsError(PnpdeError):
    """Not enough data to compute a statistic."""


class ConfigError(PnpdeError):
    """An experiment configuration could not be read or is invalid."""


class ReferenceNotConvergedError(PnpdeError):
    """The reference solution failed its Richardson convergence gate."""


class IllConditionedAssimilationError(PnpdeError):
    """The observation Gram matrix could not be factorised, even after
    escalating the jitter to its maximum."""

    def __init__(self, step: Optional[int], jitter: float, size: int):
        self.step = step
        self.jitter = jitter
        self.size = size
        where = "initial data" if step is None else f"step {step}"
        super().__init__(
            f"Ill-conditioned assimilation at {where}: Cholesky failed for "
            f"a batch of {size} observations with jitter {jitter:.3g}"
        )


class NonFiniteEvaluationError(PnpdeError):
    """A black-box callable returned NaN or infinity."""

    def __init__(self, name: str, node: Tuple[float, ...], value: float):
        self.name = name
        self.node = node
        self.value = value
        super().__init__(f"{name}{node} returned non-finite value {value!r}")


class SingularSystemError(PnpdeError):
    """A Crank-Nicolson step produced a singular tridiagonal system."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(
            f"Singular tridiagonal system at Crank-Nicolson step {step}"
        )
