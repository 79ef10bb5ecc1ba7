import configparser
import math
import os
from dataclasses import asdict, dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import regex as re

from pnpde.baselines import MIN_REFINE
from pnpde.exceptions import ConfigError
from pnpde.kernels import MAX_MATERN_INDEX, TensorKernel
from pnpde.models import (
    Grid,
    LinearisationStrategy,
    MLENormalisation,
    SolveOptions,
)
from pnpde.problems import PDEProblem, get_problem, problems_lookup
from pnpde.solver import default_prior, rational_quadratic_prior

logger = getLogger("pnpde")

# Grids have 2^i + 1 nodes per axis with i in this range
MIN_EXPONENT = 2
MAX_EXPONENT = 7

OUTPUT_ENV_VAR = "PNPDE_OUT"
DEFAULT_OUTPUT_DIR = "out"

PRIOR_KINDS = ("default-matern", "rational-quadratic")

# (rho_t, rho_x) of the Matérn prior per problem
default_length_scales: Dict[str, Tuple[float, float]] = {
    "burgers": (6.0, 3.0),
    "porous": (1.0, 2.0),
    "burgers_forced": (0.5, 0.5),
    "heat": (1.0, 1.0),
}

RANGE_REGEX = re.compile(r"^\s*(?P<start>\d+)\s*-\s*(?P<stop>\d+)\s*$")
LIST_REGEX = re.compile(r"^\s*\d+\s*(?:,\s*\d+\s*)*$")
CELL_REGEX = re.compile(r"^\s*(?P<i>\d+)\s*:\s*(?P<j>\d+)\s*$")


def _check_exponent(value: int) -> None:
    if not MIN_EXPONENT <= value <= MAX_EXPONENT:
        raise ConfigError(
            f"Exponent {value} outside [{MIN_EXPONENT}, {MAX_EXPONENT}]"
        )


def parse_exponents(text: str) -> Tuple[int, ...]:
    """Parse "2-7", "2,4,6" or "3" into a sorted tuple of exponents."""
    match = RANGE_REGEX.match(text)
    if match:
        start, stop = int(match["start"]), int(match["stop"])
        if start > stop:
            raise ConfigError(f"Empty exponent range {text!r}")
        values = tuple(range(start, stop + 1))
    elif LIST_REGEX.match(text):
        values = tuple(sorted({int(v) for v in text.split(",")}))
    else:
        raise ConfigError(f"Cannot parse exponents {text!r}")
    for value in values:
        _check_exponent(value)
    return values


def parse_cells(text: str) -> Tuple[Tuple[int, int], ...]:
    """Parse "i:j,i:j" into exponent pairs."""
    cells = []
    for part in text.split(","):
        match = CELL_REGEX.match(part)
        if not match:
            raise ConfigError(f"Cannot parse cell {part!r} in {text!r}")
        cell = (int(match["i"]), int(match["j"]))
        for value in cell:
            _check_exponent(value)
        cells.append(cell)
    return tuple(cells)


@dataclass(frozen=True)
class ReferenceConfig:
    """Settings of the Crank-Nicolson reference for problems without a
    closed-form truth. base_n and base_m default to the largest sweep
    grid; max_dt defaults to the problem's own time resolution."""

    refine: int = 8
    base_n: Optional[int] = None
    base_m: Optional[int] = None
    tolerance_fraction: float = 0.1
    max_dt: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    problem_overrides: Dict[str, float] = field(default_factory=dict)
    strategy: Optional[str] = None
    conserve_mass: bool = False
    mle_normalisation: MLENormalisation = MLENormalisation.PER_STEP
    z_floor: float = 1e-6
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    record_runtime: bool = False
    max_workers: int = 1
    prior_kind: str = "default-matern"
    beta: Tuple[int, int] = (1, 2)
    rho: Optional[Tuple[float, float]] = None
    sweep_i: Tuple[int, ...] = (MIN_EXPONENT,)
    sweep_j: Tuple[int, ...] = (MIN_EXPONENT,)
    cells: Optional[Tuple[Tuple[int, int], ...]] = None
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)

    def __post_init__(self):
        if self.problem not in problems_lookup:
            raise ConfigError(
                f"Unknown problem {self.problem!r}; expected one of "
                f"{list(problems_lookup.keys())}"
            )
        if self.prior_kind not in PRIOR_KINDS:
            raise ConfigError(
                f"Unknown prior {self.prior_kind!r}; expected one of "
                f"{list(PRIOR_KINDS)}"
            )
        if not all(0 <= b <= MAX_MATERN_INDEX for b in self.beta):
            raise ConfigError(f"beta out of range: {self.beta}")
        if self.rho is not None and not all(
            r > 0 and math.isfinite(r) for r in self.rho
        ):
            raise ConfigError(f"Length-scales must be positive: {self.rho}")
        if not self.z_floor > 0:
            raise ConfigError(f"z_floor must be positive: {self.z_floor}")
        if self.max_workers < 1:
            raise ConfigError(f"max_workers must be >= 1: {self.max_workers}")
        if self.reference.refine < MIN_REFINE:
            raise ConfigError(
                f"refine must be at least {MIN_REFINE}: "
                f"{self.reference.refine}"
            )
        if self.reference.max_dt is not None and not (
            self.reference.max_dt > 0 and math.isfinite(self.reference.max_dt)
        ):
            raise ConfigError(
                f"max_dt must be positive: {self.reference.max_dt}"
            )
        if self.strategy is not None:
            try:
                LinearisationStrategy.from_name(self.strategy)
            except ValueError as e:
                raise ConfigError(str(e)) from e
        try:
            self.build_problem()
        except TypeError as e:
            raise ConfigError(
                f"Bad overrides for {self.problem}: {self.problem_overrides}"
            ) from e
        if self.cells is not None:
            for cell in self.cells:
                for value in cell:
                    _check_exponent(value)

    @property
    def length_scales(self) -> Tuple[float, float]:
        if self.rho is not None:
            return self.rho
        if self.prior_kind == "rational-quadratic":
            return (math.sqrt(3.0), math.sqrt(3.0))
        return default_length_scales[self.problem]

    def build_problem(self) -> PDEProblem:
        """A fresh problem instance with its own counters."""
        return get_problem(self.problem, **self.problem_overrides)

    def build_kernel(self) -> TensorKernel:
        rho_t, rho_x = self.length_scales
        if self.prior_kind == "rational-quadratic":
            return rational_quadratic_prior(rho_t, rho_x)
        return default_prior(self.beta, rho_t, rho_x)

    def build_strategy(self, problem: PDEProblem) -> LinearisationStrategy:
        if self.strategy is None:
            return LinearisationStrategy(problem.strategy_hint)
        return LinearisationStrategy.from_name(self.strategy)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            conserve_mass=self.conserve_mass,
            mle_normalisation=self.mle_normalisation,
            z_floor=self.z_floor,
        )

    def sweep_cells(
        self, selection: Optional[Tuple[Tuple[int, int], ...]] = None
    ) -> List[Tuple[int, int]]:
        """(i, j) exponent pairs to run, sorted. selection (from the command
        line) takes precedence over the configured cells."""
        cells = selection or self.cells
        if cells is None:
            cells = tuple((i, j) for i in self.sweep_i for j in self.sweep_j)
        return sorted(set(cells))

    def grid(self, problem: PDEProblem, i: int, j: int) -> Grid:
        return problem.grid(2**i + 1, 2**j + 1)

    def reference_base_shape(
        self, cells: List[Tuple[int, int]]
    ) -> Tuple[int, int]:
        base_n = self.reference.base_n or max(2**i + 1 for i, _ in cells)
        base_m = self.reference.base_m or max(2**j + 1 for _, j in cells)
        return base_n, base_m

    def output_path(self, flag: Optional[str] = None) -> Path:
        """--out flag, then $PNPDE_OUT, then the configured directory, then
        ./out."""
        return Path(
            flag
            or os.environ.get(OUTPUT_ENV_VAR)
            or self.output_dir
            or DEFAULT_OUTPUT_DIR
        )

    def as_dict(self) -> Dict[str, Any]:
        echo = asdict(self)
        echo["mle_normalisation"] = self.mle_normalisation.value
        echo["length_scales"] = list(self.length_scales)
        return echo


def _get(
    parser: configparser.ConfigParser,
    section: str,
    key: str,
    getter: str = "get",
    fallback: Any = None,
) -> Any:
    if not parser.has_section(section):
        return fallback
    try:
        return getattr(parser, getter)(section, key, fallback=fallback)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Build an ExperimentConfig from INI text.

    Raises:
        ConfigError: If the text is not valid INI or a value is invalid.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from e
    problem = _get(parser, "experiment", "problem")
    if not problem:
        raise ConfigError(f"{source}: [experiment] problem is required")

    overrides = {}
    if parser.has_section("problem"):
        for key in parser["problem"]:
            overrides[key] = _get(parser, "problem", key, "getfloat")

    rho = None
    rho_t = _get(parser, "prior", "rho_t", "getfloat")
    rho_x = _get(parser, "prior", "rho_x", "getfloat")
    if (rho_t is None) != (rho_x is None):
        raise ConfigError(f"{source}: give both rho_t and rho_x or neither")
    if rho_t is not None:
        rho = (rho_t, rho_x)

    cells = _get(parser, "sweep", "cells")
    normalisation = _get(
        parser, "experiment", "mle_normalisation", fallback="per-step"
    )
    try:
        mle_normalisation = MLENormalisation(normalisation)
    except ValueError as e:
        raise ConfigError(
            f"{source}: unknown mle_normalisation {normalisation!r}"
        ) from e
    seed = _get(parser, "experiment", "seed", "getint")

    config = ExperimentConfig(
        problem=problem,
        problem_overrides=overrides,
        strategy=_get(parser, "experiment", "strategy"),
        conserve_mass=_get(
            parser, "experiment", "conserve_mass", "getboolean", False
        ),
        mle_normalisation=mle_normalisation,
        z_floor=_get(parser, "experiment", "z_floor", "getfloat", 1e-6),
        output_dir=_get(parser, "experiment", "output_dir"),
        seed=seed,
        record_runtime=_get(
            parser, "experiment", "record_runtime", "getboolean", False
        ),
        max_workers=_get(parser, "experiment", "max_workers", "getint", 1),
        prior_kind=_get(parser, "prior", "kind", fallback="default-matern"),
        beta=(
            _get(parser, "prior", "beta_t", "getint", 1),
            _get(parser, "prior", "beta_x", "getint", 2),
        ),
        rho=rho,
        sweep_i=parse_exponents(_get(parser, "sweep", "i", fallback="2")),
        sweep_j=parse_exponents(_get(parser, "sweep", "j", fallback="2")),
        cells=parse_cells(cells) if cells else None,
        reference=ReferenceConfig(
            refine=_get(parser, "reference", "refine", "getint", 8),
            base_n=_get(parser, "reference", "base_n", "getint"),
            base_m=_get(parser, "reference", "base_m", "getint"),
            tolerance_fraction=_get(
                parser, "reference", "tolerance_fraction", "getfloat", 0.1
            ),
            max_dt=_get(parser, "reference", "max_dt", "getfloat"),
        ),
    )
    if seed is not None:
        logger.debug(
            "Seed %d is recorded only; solves are deterministic", seed
        )
    return config


def load_config(path: Path) -> ExperimentConfig:
    """Read an experiment configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    return parse_config(text, source=str(path))
