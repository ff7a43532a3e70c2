"""Synthetic regression instances and their sampled oracles.

An instance is a row matrix A (m x n), a target vector b, and one of three
objectives:

    least_squares    f(x) = sum_i (a_i.x - b_i)^2
    least_absolute   f(x) = sum_i |a_i.x - b_i|
    lasso            f(x) = (1/n) sum_i (a_i.x - b_i)^2 + lambda ||x||_1

Generation draws v uniform on [0,1]^n and G with independent standard normal
entries (Box-Muller over the documented generator). For least_squares /
least_absolute the rows are A = G (I + vv^T), which plants correlation, and
the targets interpolate a planted point x0 (b = A x0), so x0 is a known
optimum with zero objective. For lasso the rows stay plain standard normal
(correlated rows blow the sampled quadratic's curvature past what the
documented step sizes tolerate), b is an independent standard normal vector,
and the reference optimum is left unset until a long deterministic full-batch
proximal-gradient run supplies it.

Rows are numbered 1..m at every oracle surface; per-sample oracles work on a
single row and are one-dimensional reductions along it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ._rng import STREAM_INSTANCE, make_generator, normals
from .errors import ConfigurationError

__all__ = [
    "KINDS",
    "ProblemInstance",
    "SampleOracleResult",
    "ConstraintSet",
    "whole_space",
    "ball",
    "box",
    "project",
    "gen",
    "with_reference",
    "sample_index",
    "subgrad",
    "prox_sample",
    "prox_l1",
    "objective",
    "lasso_reference",
    "dump_instance",
    "load_instance",
]

KINDS = ("least_squares", "least_absolute", "lasso")


@dataclass(frozen=True)
class ProblemInstance:
    kind: str
    rows: np.ndarray
    targets: np.ndarray
    lam: float
    seed: int
    reference_optimum: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SampleOracleResult:
    """Per-sample objective contribution, its subgradient, and the row index."""

    value: float
    subgradient: np.ndarray
    index: int


@dataclass(frozen=True)
class ConstraintSet:
    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


def whole_space() -> ConstraintSet:
    return ConstraintSet(kind="whole_space")


def ball(radius: float, center: np.ndarray | None = None) -> ConstraintSet:
    """Euclidean ball; center None means the origin (broadcast over any n)."""
    if not radius > 0:
        raise ConfigurationError(f"ball radius must be positive, got {radius}")
    c = np.zeros(()) if center is None else np.asarray(center, dtype=float)
    return ConstraintSet(kind="ball", center=c, radius=float(radius))


def box(lo: np.ndarray, hi: np.ndarray) -> ConstraintSet:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ConfigurationError("box lower bounds must not exceed upper bounds")
    return ConstraintSet(kind="box", lo=lo, hi=hi)


def project(x: np.ndarray, cset: ConstraintSet) -> np.ndarray:
    """Euclidean projection onto the constraint set."""
    if cset.kind == "whole_space":
        return x
    if cset.kind == "ball":
        gap = x - cset.center
        dist = np.linalg.norm(gap)
        # the relative slack keeps re-projection of a boundary point exact:
        # radial scaling rounds, so a freshly projected point can sit an ulp
        # outside the sphere
        if dist <= cset.radius * (1.0 + 1e-12):
            return x
        return cset.center + (cset.radius / dist) * gap
    if cset.kind == "box":
        return np.clip(x, cset.lo, cset.hi)
    raise ConfigurationError(f"unknown constraint kind {cset.kind!r}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def gen(kind: str, m: int, n: int, seed: int, lam: float = 0.0) -> ProblemInstance:
    """Generate an instance. Draw order: v, then G, then x0 (or b for lasso)."""
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got m={m} n={n}")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    g = make_generator(STREAM_INSTANCE, seed)
    v = g.random(n)
    gauss = normals(g, m * n).reshape(m, n)
    if kind == "lasso":
        rows = gauss
        targets = normals(g, m)
        reference = None
    else:
        rows = gauss + np.outer(gauss @ v, v)
        x0 = normals(g, n)
        targets = rows @ x0
        reference = _freeze(x0)
    return ProblemInstance(
        kind=kind,
        rows=_freeze(rows),
        targets=_freeze(targets),
        lam=float(lam),
        seed=seed,
        reference_optimum=reference,
    )


def with_reference(inst: ProblemInstance, x: np.ndarray) -> ProblemInstance:
    """Copy of the instance with a stored reference optimum."""
    ref = _freeze(np.array(x, dtype=float))
    if ref.shape != (inst.n,):
        raise ValueError(f"reference must have shape ({inst.n},)")
    return dataclasses.replace(inst, reference_optimum=ref)


def sample_index(inst: ProblemInstance, rng: np.random.Generator) -> int:
    """Uniform row index in {1..m}."""
    return int(rng.integers(1, inst.m + 1))


def _row(inst: ProblemInstance, i: int) -> np.ndarray:
    if not 1 <= i <= inst.m:
        raise ValueError(f"row index {i} outside 1..{inst.m}")
    return inst.rows[i - 1]


def subgrad(inst: ProblemInstance, x: np.ndarray, i: int) -> SampleOracleResult:
    """Per-sample value and subgradient at row i.

    least_squares and the lasso smooth part use 2 a_i (a_i.x - b_i); the
    absolute deviation uses a_i sign(a_i.x - b_i) with sign(0) = 0, a valid
    subgradient at the kink. Lasso's value/subgradient cover the sampled
    quadratic term only (unnormalized); the l1 part is handled by prox_l1.
    """
    a = _row(inst, i)
    r = float(a @ x - inst.targets[i - 1])
    if inst.kind == "least_absolute":
        return SampleOracleResult(value=abs(r), subgradient=np.sign(r) * a, index=i)
    return SampleOracleResult(value=r * r, subgradient=(2.0 * r) * a, index=i)


def prox_sample(inst: ProblemInstance, x: np.ndarray, i: int, alpha: float) -> np.ndarray:
    """argmin_v per-sample-term(v) + ||v - x||^2 / (2 alpha), in closed form.

    The minimizer lies on the line v = x - gamma a_i. With r = a_i.x - b_i
    and q = ||a_i||^2:
        quadratic term:  gamma = 2 alpha r / (1 + 2 alpha q)
        absolute term:   gamma = sign(r) min(alpha, |r| / q)
    A zero row leaves x unchanged.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a = _row(inst, i)
    r = float(a @ x - inst.targets[i - 1])
    q = float(a @ a)
    if q == 0.0:
        return x.copy()
    if inst.kind == "least_absolute":
        gamma = np.sign(r) * min(alpha, abs(r) / q)
    else:
        gamma = 2.0 * alpha * r / (1.0 + 2.0 * alpha * q)
    return x - gamma * a


def prox_l1(x: np.ndarray, tau: float) -> np.ndarray:
    """Soft threshold sign(x) max(|x| - tau, 0), the prox of tau ||.||_1."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def objective(inst: ProblemInstance, x: np.ndarray) -> float:
    """Deterministic full objective at x."""
    residual = inst.rows @ x - inst.targets
    if inst.kind == "least_squares":
        return float(residual @ residual)
    if inst.kind == "least_absolute":
        return float(np.sum(np.abs(residual)))
    return float(residual @ residual / inst.n + inst.lam * np.sum(np.abs(x)))


def lasso_reference(inst: ProblemInstance, steps: int = 100_000) -> np.ndarray:
    """Deterministic full-batch proximal-gradient reference for a lasso instance.

    Runs ISTA from the origin on the sampling-consistent objective
    (1/m) ||Ax - b||^2 + lambda ||x||_1, whose stationarity condition matches
    the fixed point of the stochastic two-stage step as the step size decays.
    Step size 1/L with L = 2 lambda_max(A^T A) / m. Stops early only when an
    iterate repeats exactly, which makes the remaining steps no-ops.
    """
    if inst.kind != "lasso":
        raise ValueError("reference run is defined for lasso instances")
    ata = inst.rows.T @ inst.rows
    atb = inst.rows.T @ inst.targets
    lipschitz = 2.0 * float(np.linalg.eigvalsh(ata)[-1]) / inst.m
    step = 1.0 / lipschitz
    scale = 2.0 / inst.m
    x = np.zeros(inst.n)
    for _ in range(steps):
        nxt = prox_l1(x - step * scale * (ata @ x - atb), step * inst.lam)
        if np.array_equal(nxt, x):
            break
        x = nxt
    return x


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def dump_instance(inst: ProblemInstance, path) -> None:
    """Text dump: header `kind m n seed lambda`, m rows of n+1 floats
    (row entries then target), then the reference line (n floats or `unset`).
    17 significant digits give exact float64 round-trips."""
    lines = [f"{inst.kind} {inst.m} {inst.n} {inst.seed} {_fmt(inst.lam)}"]
    for i in range(inst.m):
        entries = [_fmt(v) for v in inst.rows[i]] + [_fmt(inst.targets[i])]
        lines.append(" ".join(entries))
    if inst.reference_optimum is None:
        lines.append("unset")
    else:
        lines.append(" ".join(_fmt(v) for v in inst.reference_optimum))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ConfigurationError(f"empty instance file {path}")
    head = lines[0].split()
    if len(head) != 5:
        raise ConfigurationError(f"bad instance header {lines[0]!r}")
    kind, m, n, seed, lam = head[0], int(head[1]), int(head[2]), int(head[3]), float(head[4])
    if kind not in KINDS:
        raise ConfigurationError(f"unknown problem kind {kind!r}")
    if len(lines) != m + 2:
        raise ConfigurationError(f"expected {m + 2} lines, found {len(lines)}")
    rows = np.empty((m, n))
    targets = np.empty(m)
    for i in range(m):
        values = [float(tok) for tok in lines[1 + i].split()]
        if len(values) != n + 1:
            raise ConfigurationError(f"row {i + 1} has {len(values)} values, expected {n + 1}")
        rows[i] = values[:n]
        targets[i] = values[n]
    ref_line = lines[m + 1]
    if ref_line.strip() == "unset":
        reference = None
    else:
        ref = np.array([float(tok) for tok in ref_line.split()])
        if ref.shape != (n,):
            raise ConfigurationError(f"reference line has {ref.size} values, expected {n}")
        reference = _freeze(ref)
    return ProblemInstance(
        kind=kind,
        rows=_freeze(rows),
        targets=_freeze(targets),
        lam=lam,
        seed=seed,
        reference_optimum=reference,
    )
