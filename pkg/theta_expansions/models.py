from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Literal

import numpy as np

from theta_expansions.errors import ConfigError, DomainError, ParameterError
from theta_expansions.qfield import QuadNumber, is_perfect_square, q_sign, to_decimal

Mode = Literal["exact", "interval", "double"]
MixingMethod = Literal["exact", "ulam"]
NormingFamily = Literal["n_log_n", "n_log_n_pow", "n_pow", "table"]
NormingClass = Literal["convergent", "divergent"]
TruncationLevel = Literal["n_log_n"] | int | None
ExactPoint = QuadNumber | Fraction | int
Point = ExactPoint | float

DEFAULT_CHECKPOINTS = (1_000, 10_000, 100_000, 1_000_000)


@dataclass(frozen=True)
class ThetaParams:
    m: int
    theta: float = field(init=False)
    log1p_theta2: float = field(init=False)

    def __post_init__(self) -> None:
        if isinstance(self.m, bool) or not isinstance(self.m, int):
            raise ParameterError(f"m must be an integer, got {self.m!r}", m=str(self.m))
        if self.m < 2 or is_perfect_square(self.m):
            raise ParameterError(
                f"m must be >= 2 and not a perfect square, got {self.m}", m=self.m
            )
        object.__setattr__(self, "theta", 1.0 / math.sqrt(self.m))
        object.__setattr__(self, "log1p_theta2", math.log1p(1.0 / self.m))

    @property
    def inv_theta(self) -> float:
        return math.sqrt(self.m)

    @property
    def theta_exact(self) -> QuadNumber:
        # 1/sqrt(m) == sqrt(m)/m
        return QuadNumber(Fraction(0), Fraction(1, self.m), self.m)

    @property
    def inv_theta_exact(self) -> QuadNumber:
        return QuadNumber.sqrt(self.m)


@dataclass(frozen=True)
class Interval:
    lo: QuadNumber | float
    hi: QuadNumber | float
    lo_open: bool = True
    hi_open: bool = False

    @property
    def lo_float(self) -> float:
        return float(self.lo)

    @property
    def hi_float(self) -> float:
        return float(self.hi)

    @property
    def diameter(self) -> float:
        if isinstance(self.lo, QuadNumber) and isinstance(self.hi, QuadNumber):
            return float(self.hi - self.lo)
        return self.hi_float - self.lo_float

    def contains(self, x: Point) -> bool:
        if (
            isinstance(x, (QuadNumber, Fraction, int))
            and isinstance(self.lo, QuadNumber)
            and isinstance(self.hi, QuadNumber)
        ):
            lo_side = q_sign(self.lo - x)
            hi_side = q_sign(self.hi - x)
        else:
            lo_side = _float_sign(self.lo_float - float(x))
            hi_side = _float_sign(self.hi_float - float(x))
        above_lo = lo_side < 0 or (lo_side == 0 and not self.lo_open)
        below_hi = hi_side > 0 or (hi_side == 0 and not self.hi_open)
        return above_lo and below_hi

    def to_record(self, places: int | None = None) -> dict[str, Any]:
        return {
            "lo": str(self.lo),
            "hi": str(self.hi),
            "lo_decimal": decimal_text(self.lo, places),
            "hi_decimal": decimal_text(self.hi, places),
            "lo_open": self.lo_open,
            "hi_open": self.hi_open,
        }


def _float_sign(value: float) -> int:
    return (value > 0) - (value < 0)


def decimal_text(value: Any, places: int | None, m: int = 2) -> Any:
    """Decimal rendering of a point.

    Exact points are truncated to ``places`` digits with exact arithmetic. Without
    ``places``, or for double-precision points, the nearest float is returned.
    """
    if places is None or isinstance(value, float):
        return float(value)
    if isinstance(value, QuadNumber):
        return to_decimal(value, places)
    if isinstance(value, (Fraction, int)):
        return to_decimal(QuadNumber.rational(Fraction(value), m), places)
    return str(value)


@dataclass(frozen=True)
class Expansion:
    m: int
    mode: Mode
    digits: tuple[int, ...]
    orbit: tuple[Any, ...]
    terminated: bool
    precision: int | None = None

    @property
    def final_point(self) -> Any:
        return self.orbit[-1]

    def to_record(self, places: int | None = None) -> dict[str, Any]:
        final = self.final_point
        if isinstance(final, float) or (
            places is None and isinstance(final, (QuadNumber, Fraction, int))
        ):
            final_text = repr(float(final))
        elif isinstance(final, (QuadNumber, Fraction, int)):
            final_text = decimal_text(final, places, self.m)
        else:
            final_text = str(final)
        return {
            "m": self.m,
            "mode": self.mode,
            "digits": list(self.digits),
            "terminated": self.terminated,
            "final_point_decimal": final_text,
        }


@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Row-stochastic Ulam matrix on a uniform grid of ``[0, theta]``."""

    m: int
    cells: int
    matrix: np.ndarray
    branch_cutoff: int

    @property
    def theta(self) -> float:
        return 1.0 / math.sqrt(self.m)

    @property
    def width(self) -> float:
        return self.theta / self.cells

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.theta, self.cells + 1)

    @property
    def midpoints(self) -> np.ndarray:
        grid = self.grid
        return 0.5 * (grid[:-1] + grid[1:])


@dataclass(frozen=True)
class MixingEstimate:
    lag: int
    psi_hat: float
    pairs_evaluated: int
    method: MixingMethod
    argmax: tuple[int, int]


@dataclass(frozen=True)
class PsiFit:
    amplitude: float
    rate: float
    lags_used: tuple[int, ...]


@dataclass(frozen=True)
class NormingSequence:
    family: NormingFamily = "n_log_n"
    p: float = 1.0
    table: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.family == "table":
            if not self.table or any(value <= 0 for value in self.table):
                raise ConfigError("a norming table needs positive entries")
        elif self.p <= 0:
            raise ConfigError(f"norming exponent must be positive, got {self.p}")

    def value(self, n: int) -> float:
        if n < 1:
            raise DomainError(f"norming index must be >= 1, got {n}", n=n)
        if self.family == "n_log_n":
            return n * max(math.log(n), 1.0)
        if self.family == "n_log_n_pow":
            return n * max(math.log(n), 1.0) ** self.p
        if self.family == "n_pow":
            return float(n) ** self.p
        if n > len(self.table):
            raise ConfigError(
                f"norming table has {len(self.table)} entries, index {n} requested"
            )
        return self.table[n - 1]

    def values(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=float)
        log_plus = np.maximum(np.log(k), 1.0)
        if self.family == "n_log_n":
            return k * log_plus
        if self.family == "n_log_n_pow":
            return k * log_plus**self.p
        if self.family == "n_pow":
            return k**self.p
        if n > len(self.table):
            raise ConfigError(
                f"norming table has {len(self.table)} entries, index {n} requested"
            )
        return np.asarray(self.table[:n], dtype=float)

    def label(self) -> str:
        if self.family in ("n_log_n_pow", "n_pow"):
            return f"{self.family}({self.p:g})"
        return self.family


@dataclass(frozen=True)
class TrajectoryOptions:
    checkpoints: tuple[int, ...] = ()
    level: TruncationLevel = "n_log_n"
    norming: NormingSequence | None = None
    multiplier: float = 1.0
    points_per_decade: int = 0
    digit_cap: int = 0


@dataclass(frozen=True)
class RunningPoint:
    k: int
    ratio: float
    trimmed_ratio: float


@dataclass(frozen=True)
class Snapshot:
    n: int
    S_n: int
    L_n: int
    truncated_S: int
    remainder_R: int
    level: int | None
    exceedance_count: int = 0
    normed: float = math.nan
    block_max_normed: float = math.nan
    starred_S: int = 0

    @property
    def trimmed(self) -> int:
        return self.S_n - self.L_n


@dataclass(frozen=True)
class TrajectoryStats:
    n: int
    S_n: int
    L_n: int
    truncated_S: int
    remainder_R: int
    level: int | None
    exceedance_count: int
    short: bool = False
    start: float = math.nan
    trial: int = 0
    snapshots: tuple[Snapshot, ...] = ()
    running_ratios: tuple[RunningPoint, ...] = ()
    digit_counts: tuple[int, ...] = ()

    @property
    def trimmed(self) -> int:
        return self.S_n - self.L_n


@dataclass(frozen=True)
class ExperimentConfig:
    m: int = 2
    n: int = 1_000_000
    trials: int = 200
    seed: int = 0
    epsilons: tuple[float, ...] = (0.5, 1.0, 2.0)
    norming: NormingSequence = field(default_factory=NormingSequence)
    M: float = 1.0
    checkpoints: tuple[int, ...] = DEFAULT_CHECKPOINTS
    threads: int = 1
    points_per_decade: int = 20

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.n < 2:
            raise ConfigError(f"horizon must be >= 2, got {self.n}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.M <= 0:
            raise ConfigError(f"exceedance multiplier must be positive, got {self.M}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if any(b <= a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ConfigError("checkpoints must be strictly increasing")
        ThetaParams(self.m)

    def horizons(self) -> tuple[int, ...]:
        kept = tuple(c for c in self.checkpoints if 2 <= c < self.n)
        return (*kept, self.n)

    def to_record(self) -> dict[str, Any]:
        record = asdict(self)
        record["epsilons"] = list(self.epsilons)
        record["checkpoints"] = list(self.horizons())
        record["norming"] = {
            "family": self.norming.family,
            "p": self.norming.p,
            "table_length": len(self.norming.table),
        }
        return record
