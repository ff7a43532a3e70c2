"""Momentum-extrapolated stochastic solvers.

All three methods share the two-point extrapolation
    x_{k+1} = (1 + theta_k) v_k - theta_k v_{k-1}
and differ in how the sampled oracle turns x_{k+1} into v_{k+1}:

    ssgd        v_{k+1} = project(x_{k+1} - alpha_k g(x_{k+1}, xi))
    prox_rm     v_{k+1} = argmin_v sample-term(v) + ||v - x_{k+1}||^2 / (2 alpha_k)
    composite   two stages on the sampled quadratic and the l1 term
                (explicit_first: gradient step then soft threshold;
                 implicit_first: proximal step then l1 subgradient step)

A run starts from v_1 = v_2 (standard normal by default) and advances to the
iterate with index N; the update producing v_{k+1} consumes schedule values
alpha_k, theta_k, so the first executable step index is k = 2.

Run RNG stream layout (fixed, documented for bitwise reproducibility): the
init vector consumes Box-Muller normals first when init is gaussian, then
each step draws exactly one uniform row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._rng import RNG_ID, STREAM_RUN, make_generator, normals
from .errors import ConfigurationError, DivergenceError
from .problems import (
    ConstraintSet,
    ProblemInstance,
    objective,
    project,
    prox_l1,
    prox_sample,
    sample_index,
    subgrad,
    whole_space,
)
from .schedules import MomentumSchedule, StepSchedule, classify

__all__ = [
    "METHODS",
    "SolverConfig",
    "SolverState",
    "Checkpoint",
    "SolverTrace",
    "extrapolate",
    "ssgd_step",
    "prox_rm_step",
    "composite_step",
    "run",
]

METHODS = ("ssgd", "prox_rm", "composite")
COMPOSITE_ORDERS = ("explicit_first", "implicit_first")


@dataclass(frozen=True)
class SolverConfig:
    method: str
    step: StepSchedule
    momentum: MomentumSchedule
    iterations: int
    seed: int
    constraint: ConstraintSet = field(default_factory=whole_space)
    stride: float = 1.1
    composite_order: str = "explicit_first"
    init: str = "gaussian"
    instrument: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.iterations < 2:
            raise ConfigurationError(f"iteration budget must be >= 2, got {self.iterations}")
        if not self.stride > 1.0:
            raise ConfigurationError(f"checkpoint stride must exceed 1, got {self.stride}")
        if self.composite_order not in COMPOSITE_ORDERS:
            raise ConfigurationError(f"unknown composite order {self.composite_order!r}")
        if self.init not in ("gaussian", "zeros"):
            raise ConfigurationError(f"unknown init {self.init!r}")


@dataclass
class SolverState:
    """Adjacent iterate pair (v_{k-1}, v_k) plus the index k and run stream."""

    v_prev: np.ndarray
    v_curr: np.ndarray
    k: int
    rng: np.random.Generator


@dataclass(frozen=True)
class Checkpoint:
    k: int
    dist: float
    obj_gap: float
    increment: float
    alpha: float
    theta: float


@dataclass
class SolverTrace:
    checkpoints: list[Checkpoint]
    metadata: dict[str, str]
    diverged: bool = False
    diverged_at: int | None = None
    instrumentation: list[tuple[int, float, float]] | None = None

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


def extrapolate(v_curr: np.ndarray, v_prev: np.ndarray, theta: float) -> np.ndarray:
    """(1 + theta) v_curr - theta v_prev, evaluated as v_curr + theta (v_curr - v_prev).

    The increment form makes the extrapolation an exact no-op when the two
    iterates coincide (the first step, by construction) and keeps the step
    identity ||x - v_curr|| = theta ||v_curr - v_prev|| tight at rounding
    scale; the expanded form loses both to cancellation.
    """
    if v_curr.shape != v_prev.shape:
        raise ValueError(f"shape mismatch {v_curr.shape} vs {v_prev.shape}")
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {theta}")
    return v_curr + theta * (v_curr - v_prev)


def _advance(state: SolverState, v_next: np.ndarray) -> SolverState:
    if not np.all(np.isfinite(v_next)):
        raise DivergenceError(
            f"iterate {state.k + 1} left the finite range", step=state.k + 1
        )
    return SolverState(v_prev=state.v_curr, v_curr=v_next, k=state.k + 1, rng=state.rng)


def ssgd_step(
    state: SolverState,
    inst: ProblemInstance,
    alpha: float,
    theta: float,
    constraint: ConstraintSet,
) -> SolverState:
    """Projected subgradient step at the extrapolated point."""
    x = extrapolate(state.v_curr, state.v_prev, theta)
    i = sample_index(inst, state.rng)
    g = subgrad(inst, x, i).subgradient
    return _advance(state, project(x - alpha * g, constraint))


def prox_rm_step(
    state: SolverState, inst: ProblemInstance, alpha: float, theta: float
) -> SolverState:
    """Sampled proximal step at the extrapolated point."""
    x = extrapolate(state.v_curr, state.v_prev, theta)
    i = sample_index(inst, state.rng)
    return _advance(state, prox_sample(inst, x, i, alpha))


def composite_step(
    state: SolverState,
    inst: ProblemInstance,
    alpha: float,
    theta: float,
    order: str = "explicit_first",
) -> SolverState:
    """Two-stage step splitting the sampled quadratic from the l1 term.

    explicit_first: v_mid = x - alpha g_quadratic(x), then soft threshold
    with alpha lambda. implicit_first: v_mid = proximal step on the sampled
    quadratic, then an explicit subgradient step on lambda ||.||_1 with the
    sign(0) = 0 convention.
    """
    if order not in COMPOSITE_ORDERS:
        raise ValueError(f"unknown composite order {order!r}")
    x = extrapolate(state.v_curr, state.v_prev, theta)
    i = sample_index(inst, state.rng)
    if order == "explicit_first":
        v_mid = x - alpha * subgrad(inst, x, i).subgradient
        v_next = prox_l1(v_mid, alpha * inst.lam)
    else:
        v_mid = prox_sample(inst, x, i, alpha)
        v_next = v_mid - alpha * inst.lam * np.sign(v_mid)
    return _advance(state, v_next)


def _checkpoint_indices(n_final: int, stride: float) -> list[int]:
    ks = {1, 2, n_final}
    k = 2
    while k < n_final:
        k = max(k + 1, int(k * stride))
        if k < n_final:
            ks.add(k)
    return sorted(ks)


def _validity_metadata(cfg: SolverConfig) -> dict[str, str]:
    report = classify(cfg.step)
    lo, hi = cfg.momentum.bounds
    if not (report.diverges_sum and report.square_summable) or hi >= 1.0:
        profile = "unverified"
    elif lo == hi == 0.0:
        profile = "no-momentum"
    elif cfg.momentum.is_constant and lo > 0.0:
        profile = "constant-momentum"
    elif cfg.momentum.is_nonincreasing:
        profile = "nonincreasing-momentum"
    else:
        profile = "unverified"
    return {
        "valid.step_diverges_sum": str(report.diverges_sum).lower(),
        "valid.step_square_summable": str(report.square_summable).lower(),
        "valid.mom_lo": format(lo, ".17g"),
        "valid.mom_hi": format(hi, ".17g"),
        "valid.mom_nonincreasing": str(cfg.momentum.is_nonincreasing).lower(),
        "hypothesis_profile": profile,
    }


def run(config: SolverConfig, inst: ProblemInstance) -> SolverTrace:
    """Run the configured method to iterate index N and collect checkpoints.

    Checkpoints land on k in {1, 2} cup {geometric stride} cup {N} and record
    dist to the reference optimum, objective gap, iterate increment, and the
    schedule values at that index. A divergent step ends the run early with
    the partial trace flagged diverged.
    """
    if inst.reference_optimum is None:
        raise ConfigurationError(
            "instance has no reference optimum; compute one before running"
        )
    ref = inst.reference_optimum
    f_ref = objective(inst, ref)
    g = make_generator(STREAM_RUN, config.seed)
    if config.init == "gaussian":
        v0 = normals(g, inst.n)
    else:
        v0 = np.zeros(inst.n)
    state = SolverState(v_prev=v0.copy(), v_curr=v0.copy(), k=2, rng=g)

    marks = set(_checkpoint_indices(config.iterations, config.stride))
    checkpoints: list[Checkpoint] = []
    instrumentation: list[tuple[int, float, float]] | None = (
        [] if config.instrument else None
    )

    def record(k: int, v_curr: np.ndarray, v_prev: np.ndarray, first: bool = False):
        inc = 0.0 if first else float(np.linalg.norm(v_curr - v_prev))
        checkpoints.append(
            Checkpoint(
                k=k,
                dist=float(np.linalg.norm(v_curr - ref)),
                obj_gap=objective(inst, v_curr) - f_ref,
                increment=inc,
                alpha=config.step.at(k),
                theta=config.momentum.at(k),
            )
        )

    record(1, state.v_curr, state.v_prev, first=True)
    if 2 in marks:
        record(2, state.v_curr, state.v_prev)

    metadata = {
        "package": f"nagsa {__version__}",
        "rng": RNG_ID,
        "method": config.method,
        "kind": inst.kind,
        "m": str(inst.m),
        "n": str(inst.n),
        "problem_seed": str(inst.seed),
        "lambda": format(inst.lam, ".17g"),
        "seed": str(config.seed),
        "N": str(config.iterations),
        "stride": format(config.stride, ".17g"),
        "init": config.init,
        "constraint": config.constraint.kind,
        "step.family": config.step.family,
        "step.c": format(config.step.c, ".17g"),
        "step.s": format(config.step.s, ".17g"),
        "step.p": format(config.step.p, ".17g"),
        "mom.family": config.momentum.family,
        "mom.theta": format(config.momentum.theta, ".17g"),
        "mom.s": format(config.momentum.s, ".17g"),
    }
    if config.method == "composite":
        metadata["composite.order"] = config.composite_order
    metadata.update(_validity_metadata(config))

    trace = SolverTrace(
        checkpoints=checkpoints, metadata=metadata, instrumentation=instrumentation
    )

    # exploding iterates are detected by the finiteness check, so the
    # intermediate overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(2, config.iterations):
            alpha = config.step.at(k)
            theta = config.momentum.at(k)
            if config.instrument:
                x_pre = extrapolate(state.v_curr, state.v_prev, theta)
                instrumentation.append(
                    (
                        k,
                        float(np.linalg.norm(x_pre - state.v_curr)),
                        theta * float(np.linalg.norm(state.v_curr - state.v_prev)),
                    )
                )
            try:
                if config.method == "ssgd":
                    state = ssgd_step(state, inst, alpha, theta, config.constraint)
                elif config.method == "prox_rm":
                    state = prox_rm_step(state, inst, alpha, theta)
                else:
                    state = composite_step(
                        state, inst, alpha, theta, config.composite_order
                    )
            except DivergenceError as err:
                trace.diverged = True
                trace.diverged_at = err.step
                err.last_checkpoint = checkpoints[-1] if checkpoints else None
                return trace
            if state.k in marks:
                record(state.k, state.v_curr, state.v_prev)
    return trace
