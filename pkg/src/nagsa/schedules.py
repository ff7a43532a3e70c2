"""Step-size and momentum schedules.

Step families:
    constant    alpha_k = c
    power       alpha_k = c / (k + s)^p

Momentum families:
    constant    theta_k = theta
    harmonic    theta_k = 1 / (k + s)
    power       theta_k = c / (k + s)^p

Indices are 1-based. Momentum values must stay inside [0, 1); constructors
refuse anything else. ``classify`` reports the two summability properties the
convergence arguments need: a divergent step sum and a convergent sum of
squares (p-series facts: sum k^-p diverges iff p <= 1, sum k^-2p converges
iff p > 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StepSchedule",
    "MomentumSchedule",
    "ValidityReport",
    "constant_step",
    "power_step",
    "constant_momentum",
    "harmonic_momentum",
    "power_momentum",
    "step_at",
    "momentum_at",
    "classify",
]


def _require_index(k: int) -> None:
    if k < 1:
        raise ValueError(f"schedule index must be >= 1, got {k}")


@dataclass(frozen=True)
class StepSchedule:
    family: str
    c: float
    s: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "power"):
            raise ValueError(f"unknown step family {self.family!r}")
        if not self.c > 0:
            raise ValueError("step constant c must be positive")
        if self.family == "power":
            if self.s < 0:
                raise ValueError("step offset s must be non-negative")
            if self.p < 0:
                raise ValueError("step exponent p must be non-negative")

    def at(self, k: int) -> float:
        _require_index(k)
        if self.family == "constant":
            return self.c
        return self.c / (k + self.s) ** self.p


@dataclass(frozen=True)
class MomentumSchedule:
    family: str
    theta: float = 0.0
    c: float = 0.0
    s: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "harmonic", "power"):
            raise ValueError(f"unknown momentum family {self.family!r}")
        if self.family == "constant":
            if not 0.0 <= self.theta < 1.0:
                raise ValueError(f"constant momentum must lie in [0, 1), got {self.theta}")
        elif self.family == "harmonic":
            if not self.s > 0:
                raise ValueError("harmonic momentum needs offset s > 0 so theta_1 < 1")
        else:
            if self.c < 0 or self.s < 0 or self.p < 0:
                raise ValueError("power momentum parameters must be non-negative")
            if not self.at(1) < 1.0:
                raise ValueError("power momentum must start below 1")

    def at(self, k: int) -> float:
        _require_index(k)
        if self.family == "constant":
            return self.theta
        if self.family == "harmonic":
            return 1.0 / (k + self.s)
        return self.c / (k + self.s) ** self.p

    @property
    def bounds(self) -> tuple[float, float]:
        """Tight enclosing interval [lo, hi] of the value sequence over k >= 1."""
        first = self.at(1)
        if self.family == "constant" or (self.family == "power" and self.p == 0.0):
            return (first, first)
        # harmonic and decaying power families decrease toward 0
        return (0.0, first)

    @property
    def is_nonincreasing(self) -> bool:
        if self.family == "constant":
            return True
        if self.family == "harmonic":
            return True
        return True  # power with p >= 0 never increases in k

    @property
    def is_constant(self) -> bool:
        lo, hi = self.bounds
        return lo == hi

    def values(self, count: int) -> np.ndarray:
        """Materialize theta_1 .. theta_count as an array."""
        return np.array([self.at(k) for k in range(1, count + 1)])


@dataclass(frozen=True)
class ValidityReport:
    diverges_sum: bool
    square_summable: bool
    reason: str


def constant_step(c: float) -> StepSchedule:
    return StepSchedule("constant", c)


def power_step(c: float, s: float, p: float) -> StepSchedule:
    return StepSchedule("power", c, s, p)


def constant_momentum(theta: float) -> MomentumSchedule:
    return MomentumSchedule("constant", theta=theta)


def harmonic_momentum(s: float) -> MomentumSchedule:
    return MomentumSchedule("harmonic", s=s)


def power_momentum(c: float, s: float, p: float) -> MomentumSchedule:
    return MomentumSchedule("power", c=c, s=s, p=p)


def step_at(schedule: StepSchedule, k: int) -> float:
    return schedule.at(k)


def momentum_at(schedule: MomentumSchedule, k: int) -> float:
    return schedule.at(k)


def classify(schedule: StepSchedule) -> ValidityReport:
    """Summability classification of a step schedule.

    diverges_sum: the partial sums of alpha_k grow without bound.
    square_summable: the partial sums of alpha_k^2 converge.
    """
    if schedule.family == "constant":
        return ValidityReport(
            diverges_sum=True,
            square_summable=False,
            reason="constant steps: partial sums grow linearly, squares likewise",
        )
    p = schedule.p
    diverges = p <= 1.0
    square = 2.0 * p > 1.0
    reason = (
        f"power decay p={p:g}: sum alpha_k {'diverges' if diverges else 'converges'} "
        f"(p {'<=' if diverges else '>'} 1), sum alpha_k^2 "
        f"{'converges' if square else 'diverges'} (2p {'>' if square else '<='} 1)"
    )
    return ValidityReport(diverges_sum=diverges, square_summable=square, reason=reason)
