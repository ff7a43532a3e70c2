"""Experiment harness: config parsing, presets, deterministic CSV bundles.

Configs are flat `key = value` text with `#` comments. A `preset` key expands
to a full explicit key set before execution; explicitly written keys override
the preset. Numeric values accept exact rational literals like `1/16`.

A run produces one directory per momentum setting, each holding per-seed
trace CSVs and a summary CSV. Every CSV starts with a `# key = value`
metadata block. Bundles are byte-identical across repeated invocations of
the same config: floats are written with 17 significant digits, lines end
with LF, and wall time goes to stderr rather than into any file.
"""

from __future__ import annotations

import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from ._rng import RNG_ID
from .diagnostics import LEMMA_IDS, CheckReport, negative_controls, run_lemma_check
from .errors import ConfigurationError
from .problems import (
    KINDS,
    ConstraintSet,
    ProblemInstance,
    ball,
    box,
    dump_instance,
    gen,
    lasso_reference,
    load_instance,
    whole_space,
    with_reference,
)
from .schedules import MomentumSchedule, StepSchedule
from .solvers import COMPOSITE_ORDERS, METHODS, SolverConfig, SolverTrace, run

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "LemmaSuiteConfig",
    "RunResult",
    "ThetaGroup",
    "ResultBundle",
    "parse_config",
    "parse_lemma_config",
    "run_experiment",
    "run_lemma_suite",
    "plotdata",
]


_COMMON_PRESET = {
    "N": "20000",
    "seeds": "1,2,3,4,5",
    "problem.seed": "10",
    "step.family": "power",
    "step.s": "3",
    "step.p": "8/9",
    "mom.family": "constant",
    "mom.sweep": "0,0.5,0.9",
    "constraint": "none",
    "stride": "1.1",
    "init": "gaussian",
}

PRESETS: dict[str, dict[str, str]] = {
    "lsq-ssgd": {
        **_COMMON_PRESET,
        "method": "ssgd",
        "kind": "least_squares",
        "m": "2000",
        "n": "20",
        "step.c": "1/16",
    },
    "lsq-proxrm": {
        **_COMMON_PRESET,
        "method": "prox_rm",
        "kind": "least_squares",
        "m": "2000",
        "n": "20",
        "step.c": "1/16",
    },
    "lad-ssgd": {
        **_COMMON_PRESET,
        "method": "ssgd",
        "kind": "least_absolute",
        "m": "10000",
        "n": "100",
        "step.c": "1/2",
    },
    "lad-proxrm": {
        **_COMMON_PRESET,
        "method": "prox_rm",
        "kind": "least_absolute",
        "m": "10000",
        "n": "100",
        "step.c": "1/4",
    },
    "lasso": {
        **_COMMON_PRESET,
        "method": "composite",
        "kind": "lasso",
        "m": "10000",
        "n": "100",
        "step.c": "1/20",
        "lambda": "1",
        "composite.order": "explicit_first",
    },
}

_RUN_KEYS = frozenset(
    {
        "preset",
        "method",
        "kind",
        "m",
        "n",
        "lambda",
        "problem.seed",
        "N",
        "seeds",
        "step.family",
        "step.c",
        "step.s",
        "step.p",
        "mom.family",
        "mom.theta",
        "mom.c",
        "mom.s",
        "mom.p",
        "mom.sweep",
        "constraint",
        "stride",
        "init",
        "composite.order",
        "instance",
        "out",
    }
)

_REQUIRED_RUN_KEYS = ("method", "kind", "m", "n", "N", "seeds", "step.family", "mom.family")

_LEMMA_KEYS = frozenset(
    {"lemmas", "paths", "length", "branches", "seed", "control", "out"}
)


def _read_key_values(text: str, known: frozenset[str]) -> tuple[dict[str, str], dict[str, int]]:
    """Flat key = value lines; returns values and the line each key came from."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected `key = value`, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigurationError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
        lines[key] = lineno
    return values, lines


class _KeyedValues:
    """Effective config values with per-key provenance for error messages."""

    def __init__(self, values: dict[str, str], lines: dict[str, int], preset: str | None):
        self.values = values
        self.lines = lines
        self.preset = preset

    def where(self, key: str) -> str:
        if key in self.lines:
            return f"line {self.lines[key]}"
        return f"preset {self.preset!r}"

    def error(self, key: str, why: str) -> ConfigurationError:
        return ConfigurationError(f"{self.where(key)}: {why}")

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def number(self, key: str, default: float | None = None) -> float:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigurationError(f"missing required key {key!r}")
            return default
        try:
            return _parse_number(raw)
        except ValueError as exc:
            raise self.error(key, f"malformed number {raw!r} ({exc})") from None

    def integer(self, key: str, default: int | None = None) -> int:
        value = self.number(key, default if default is None else float(default))
        if value != int(value):
            raise self.error(key, f"expected an integer, got {self.values[key]!r}")
        return int(value)


def _parse_number(token: str) -> float:
    """Decimal or exact rational literal like 8/9."""
    token = token.strip()
    if "/" in token:
        num_s, _, den_s = token.partition("/")
        num, den = float(num_s.strip()), float(den_s.strip())
        if den == 0:
            raise ValueError("zero denominator")
        return num / den
    return float(token)


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    kind: str
    m: int
    n: int
    lam: float
    problem_seed: int
    iterations: int
    seeds: tuple[int, ...]
    step: StepSchedule
    momenta: tuple[tuple[str, MomentumSchedule], ...]  # (group label, schedule)
    constraint: ConstraintSet
    stride: float
    init: str
    composite_order: str
    instance_path: str | None
    out: str | None
    echo: tuple[tuple[str, str], ...]  # expanded key set, sorted


@dataclass(frozen=True)
class LemmaSuiteConfig:
    lemmas: tuple[str, ...]
    paths: int
    length: int
    branches: int
    seed: int
    control: str | None
    out: str | None
    echo: tuple[tuple[str, str], ...]


def _fmt_theta(value: float) -> str:
    return format(value, "g")


def _parse_constraint(spec: str, kv: _KeyedValues) -> ConstraintSet:
    if spec == "none":
        return whole_space()
    if spec.startswith("ball:"):
        try:
            radius = _parse_number(spec[len("ball:"):])
        except ValueError:
            raise kv.error("constraint", f"malformed ball radius in {spec!r}") from None
        return ball(radius=radius)
    if spec.startswith("box:"):
        parts = spec[len("box:"):].split(":")
        if len(parts) != 2:
            raise kv.error("constraint", f"box needs lo:hi, got {spec!r}")
        try:
            lo, hi = _parse_number(parts[0]), _parse_number(parts[1])
        except ValueError:
            raise kv.error("constraint", f"malformed box bounds in {spec!r}") from None
        return box(lo=lo, hi=hi)
    raise kv.error("constraint", f"unknown constraint {spec!r} (none, ball:R, box:LO:HI)")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an experiment config, expanding any preset."""
    explicit, lines = _read_key_values(text, _RUN_KEYS)

    preset_name = explicit.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigurationError(
                f"line {lines['preset']}: unknown preset {preset_name!r} "
                f"(known: {', '.join(sorted(PRESETS))})"
            )
        effective = {**PRESETS[preset_name], **explicit}
    else:
        effective = dict(explicit)

    missing = [k for k in _REQUIRED_RUN_KEYS if k not in effective]
    if missing and "mom.sweep" in effective and "mom.family" in missing:
        missing.remove("mom.family")
    if missing:
        raise ConfigurationError(f"missing required keys: {', '.join(missing)}")

    kv = _KeyedValues(effective, lines, preset_name)

    method = effective["method"]
    if method not in METHODS:
        raise kv.error("method", f"unknown method {method!r} (known: {', '.join(METHODS)})")
    kind = effective["kind"]
    if kind not in KINDS:
        raise kv.error("kind", f"unknown problem kind {kind!r} (known: {', '.join(KINDS)})")

    m = kv.integer("m")
    n = kv.integer("n")
    lam = kv.number("lambda", 0.0)
    problem_seed = kv.integer("problem.seed", 10)
    iterations = kv.integer("N")

    seeds_raw = effective["seeds"]
    try:
        seeds = tuple(int(tok.strip()) for tok in seeds_raw.split(","))
    except ValueError:
        raise kv.error("seeds", f"malformed seed list {seeds_raw!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise kv.error("seeds", "seeds must be non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise kv.error("seeds", "duplicate seeds")

    try:
        step = StepSchedule(
            family=effective["step.family"],
            c=kv.number("step.c"),
            s=kv.number("step.s", 0.0),
            p=kv.number("step.p", 0.0),
        )
    except (ValueError, ConfigurationError) as exc:
        raise kv.error("step.family", f"invalid step schedule: {exc}") from None

    sweep_raw = effective.get("mom.sweep")
    momenta: list[tuple[str, MomentumSchedule]] = []
    if sweep_raw is not None:
        if effective.get("mom.family", "constant") != "constant":
            raise kv.error("mom.sweep", "momentum sweeps require mom.family = constant")
        if "mom.theta" in effective:
            raise kv.error("mom.theta", "give either mom.theta or mom.sweep, not both")
        try:
            sweep_values = [_parse_number(tok) for tok in sweep_raw.split(",")]
        except ValueError:
            raise kv.error("mom.sweep", f"malformed sweep list {sweep_raw!r}") from None
        if len(set(sweep_values)) != len(sweep_values):
            raise kv.error("mom.sweep", "duplicate sweep values")
        for value in sweep_values:
            try:
                schedule = MomentumSchedule(family="constant", theta=value)
            except ValueError as exc:
                raise kv.error("mom.sweep", f"invalid momentum value {value!r}: {exc}") from None
            momenta.append((f"theta_{_fmt_theta(value)}", schedule))
    else:
        family = effective["mom.family"]
        mom_loc = "mom.theta" if "mom.theta" in effective else "mom.family"
        try:
            schedule = MomentumSchedule(
                family=family,
                theta=kv.number("mom.theta", 0.0),
                c=kv.number("mom.c", 0.0),
                s=kv.number("mom.s", 0.0),
                p=kv.number("mom.p", 0.0),
            )
        except ValueError as exc:
            raise kv.error(mom_loc, f"invalid momentum schedule: {exc}") from None
        if family == "constant":
            label = f"theta_{_fmt_theta(schedule.theta)}"
        else:
            label = f"theta_{family}"
        momenta.append((label, schedule))

    constraint = _parse_constraint(effective.get("constraint", "none"), kv)

    stride = kv.number("stride", 1.1)
    init = effective.get("init", "gaussian")
    composite_order = effective.get("composite.order", "explicit_first")
    if composite_order not in COMPOSITE_ORDERS:
        raise kv.error(
            "composite.order",
            f"unknown composite order {composite_order!r} (known: {', '.join(COMPOSITE_ORDERS)})",
        )

    # validate solver knobs early so errors carry config context
    try:
        SolverConfig(
            method=method,
            step=step,
            momentum=momenta[0][1],
            iterations=iterations,
            seed=seeds[0],
            constraint=constraint,
            stride=stride,
            composite_order=composite_order,
            init=init,
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from None

    echo = dict(effective)
    if preset_name is not None:
        echo["preset"] = preset_name

    return ExperimentConfig(
        method=method,
        kind=kind,
        m=m,
        n=n,
        lam=lam,
        problem_seed=problem_seed,
        iterations=iterations,
        seeds=seeds,
        step=step,
        momenta=tuple(momenta),
        constraint=constraint,
        stride=stride,
        init=init,
        composite_order=composite_order,
        instance_path=effective.get("instance"),
        out=effective.get("out"),
        echo=tuple(sorted(echo.items())),
    )


def parse_lemma_config(text: str) -> LemmaSuiteConfig:
    """Parse a lemma-suite config: which scenarios, ensemble sizes, control."""
    values, lines = _read_key_values(text, _LEMMA_KEYS)
    if "lemmas" not in values:
        raise ConfigurationError("missing required key 'lemmas' (use `lemmas = all`)")
    kv = _KeyedValues(values, lines, None)

    raw = values["lemmas"]
    if raw == "all":
        lemmas = LEMMA_IDS
    else:
        lemmas = tuple(tok.strip() for tok in raw.split(","))
        unknown = [lid for lid in lemmas if lid not in LEMMA_IDS]
        if unknown:
            raise kv.error(
                "lemmas",
                f"unknown lemma ids {unknown} (known: {', '.join(LEMMA_IDS)})",
            )

    paths = kv.integer("paths", 200)
    length = kv.integer("length", 2000)
    branches = kv.integer("branches", 200)
    seed = kv.integer("seed", 1)
    if paths < 1:
        raise kv.error("paths", "need at least one path")
    if length < 4:
        raise kv.error("length", "need length >= 4")
    if branches < 30:
        raise kv.error("branches", "need at least 30 branches")

    control_raw = values.get("control", "none")
    control = None if control_raw == "none" else control_raw
    if control is not None:
        for lid in lemmas:
            if control not in negative_controls(lid):
                raise kv.error(
                    "control",
                    f"control {control!r} is not defined for scenario {lid!r}",
                )

    return LemmaSuiteConfig(
        lemmas=lemmas,
        paths=paths,
        length=length,
        branches=branches,
        seed=seed,
        control=control,
        out=values.get("out"),
        echo=tuple(sorted(values.items())),
    )


# ---------------------------------------------------------------------------
# experiment execution

@dataclass(frozen=True)
class RunResult:
    seed: int
    trace: SolverTrace
    final_dist: float
    min_dist: float
    diverged: bool


@dataclass(frozen=True)
class ThetaGroup:
    label: str
    momentum: MomentumSchedule
    runs: tuple[RunResult, ...]


@dataclass(frozen=True)
class ResultBundle:
    root: str
    groups: tuple[ThetaGroup, ...]
    instance: ProblemInstance

    @property
    def single_run(self) -> RunResult | None:
        if len(self.groups) == 1 and len(self.groups[0].runs) == 1:
            return self.groups[0].runs[0]
        return None


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _resolve_instance(config: ExperimentConfig) -> ProblemInstance:
    path = config.instance_path
    if path is not None and os.path.exists(path):
        inst = load_instance(path)
        if (inst.kind, inst.m, inst.n) != (config.kind, config.m, config.n):
            raise ConfigurationError(
                f"instance file {path!r} is {inst.kind} {inst.m}x{inst.n}, "
                f"config wants {config.kind} {config.m}x{config.n}"
            )
        if inst.kind == "lasso" and inst.lam != config.lam:
            raise ConfigurationError(
                f"instance file {path!r} has lambda {inst.lam}, config wants {config.lam}"
            )
        if inst.reference_optimum is None:
            if inst.kind != "lasso":
                raise ConfigurationError(
                    f"instance file {path!r} has no reference optimum"
                )
            inst = with_reference(inst, lasso_reference(inst))
        return inst
    inst = gen(config.kind, config.m, config.n, config.problem_seed, lam=config.lam)
    if inst.reference_optimum is None:
        inst = with_reference(inst, lasso_reference(inst))
    if path is not None:
        dump_instance(inst, path)
    return inst


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _trace_csv_lines(trace: SolverTrace) -> list[str]:
    lines = [f"# {key} = {value}" for key, value in sorted(trace.metadata.items())]
    if trace.diverged:
        lines.append(f"# diverged_at = {trace.diverged_at}")
    lines.append("k,dist,obj_gap,increment,alpha,theta")
    for cp in trace.checkpoints:
        lines.append(
            f"{cp.k},{_fmt(cp.dist)},{_fmt(cp.obj_gap)},"
            f"{_fmt(cp.increment)},{_fmt(cp.alpha)},{_fmt(cp.theta)}"
        )
    return lines


def _summary_csv_lines(config: ExperimentConfig, group: ThetaGroup) -> list[str]:
    lines = [f"# {key} = {value}" for key, value in config.echo]
    lines.append(f"# group = {group.label}")
    lines.append(f"# rng = {RNG_ID}")
    lines.append("seed,final_dist,min_dist,diverged")
    for result in group.runs:
        lines.append(
            f"{result.seed},{_fmt(result.final_dist)},{_fmt(result.min_dist)},"
            f"{int(result.diverged)}"
        )
    return lines


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> ResultBundle:
    """Run every (momentum, seed) pair and write the bundle under out_dir.

    Divergence is recorded as a flagged summary row and a truncated trace,
    never as an abort, so sweeps with exploding baselines stay comparable.
    Wall time is reported on stderr only; bundle bytes depend only on the
    config.
    """
    out = out_dir or config.out
    if out is None:
        raise ConfigurationError("no output directory (give out = PATH or --out)")
    started = time.monotonic()
    inst = _resolve_instance(config)

    groups: list[ThetaGroup] = []
    for label, momentum in config.momenta:
        runs = []
        for seed in config.seeds:
            solver_config = SolverConfig(
                method=config.method,
                step=config.step,
                momentum=momentum,
                iterations=config.iterations,
                seed=seed,
                constraint=config.constraint,
                stride=config.stride,
                composite_order=config.composite_order,
                init=config.init,
            )
            trace = run(solver_config, inst)
            dists = [cp.dist for cp in trace.checkpoints]
            runs.append(
                RunResult(
                    seed=seed,
                    trace=trace,
                    final_dist=dists[-1],
                    min_dist=min(dists),
                    diverged=trace.diverged,
                )
            )
        groups.append(ThetaGroup(label=label, momentum=momentum, runs=tuple(runs)))

    # single writer after all runs, ordered by group then seed
    os.makedirs(out, exist_ok=True)
    for group in groups:
        group_dir = os.path.join(out, group.label)
        os.makedirs(group_dir, exist_ok=True)
        for result in group.runs:
            _write_lines(
                os.path.join(group_dir, f"trace_seed{result.seed}.csv"),
                _trace_csv_lines(result.trace),
            )
        _write_lines(os.path.join(group_dir, "summary.csv"), _summary_csv_lines(config, group))

    elapsed = time.monotonic() - started
    print(f"wall time: {elapsed:.3f} s", file=sys.stderr)
    return ResultBundle(root=out, groups=tuple(groups), instance=inst)


# ---------------------------------------------------------------------------
# lemma suite

def _lemma_summary_lines(config: LemmaSuiteConfig, reports: list[CheckReport]) -> list[str]:
    lines = [f"# {key} = {value}" for key, value in config.echo]
    lines.append(f"# rng = {RNG_ID}")
    lines.append(
        "lemma_id,paths,checks,violations,violation_rate,worst_z,"
        "converged_fraction,eta_plateaued,passed"
    )
    for rep in reports:
        eta = "na" if rep.eta_plateaued is None else str(int(rep.eta_plateaued))
        conv = "na" if rep.converged_fraction is None else _fmt(rep.converged_fraction)
        worst = _fmt(rep.worst_z) if math.isfinite(rep.worst_z) else (
            "inf" if rep.worst_z > 0 else "-inf"
        )
        lines.append(
            f"{rep.lemma_id},{rep.paths_tested},{rep.checks},{rep.violations},"
            f"{_fmt(rep.violation_rate)},{worst},{conv},{eta},{int(rep.passed)}"
        )
    return lines


def _lemma_detail_lines(reports: list[CheckReport]) -> list[str]:
    lines = ["lemma_id,path,step,V_n,estimate,z_score"]
    for rep in reports:
        for lemma_id, path, step, v_n, estimate, zscore in rep.details:
            z_text = _fmt(zscore) if math.isfinite(zscore) else (
                "inf" if zscore > 0 else "-inf"
            )
            lines.append(f"{lemma_id},{path},{step},{_fmt(v_n)},{_fmt(estimate)},{z_text}")
    return lines


def run_lemma_suite(
    config: LemmaSuiteConfig, out_dir: str | None = None
) -> tuple[list[CheckReport], bool]:
    """Run the requested scenario checks; returns (reports, all_passed).

    With a control configured, "passed" means every report FAILED as the
    broken hypothesis demands, so the suite result stays truthful.
    """
    out = out_dir or config.out
    reports = []
    for lemma_id in config.lemmas:
        params = {"control": config.control} if config.control else None
        reports.append(
            run_lemma_check(
                lemma_id,
                paths=config.paths,
                length=config.length,
                branches=config.branches,
                seed=config.seed,
                params=params,
            )
        )
    if config.control is None:
        all_good = all(rep.passed for rep in reports)
    else:
        all_good = all(not rep.passed for rep in reports)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        _write_lines(os.path.join(out, "lemma_summary.csv"), _lemma_summary_lines(config, reports))
        _write_lines(os.path.join(out, "lemma_detail.csv"), _lemma_detail_lines(reports))
    return reports, all_good


# ---------------------------------------------------------------------------
# plot data

def _read_trace_csv(path: str) -> dict[int, float]:
    ks: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        header_seen = False
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                header_seen = True  # column header row
                continue
            fields = line.split(",")
            ks[int(fields[0])] = float(fields[1])
    return ks


def plotdata(bundle_root: str) -> str:
    """Median-over-seeds log-log decay columns for every momentum group.

    One row per checkpoint index: log10 k, then one column per group with
    log10 of the median distance (exact zeros become the sentinel -16).
    """
    if not os.path.isdir(bundle_root):
        raise ConfigurationError(f"no bundle at {bundle_root!r}")
    group_names = sorted(
        (name for name in os.listdir(bundle_root) if name.startswith("theta_")),
        key=lambda name: _group_sort_key(name),
    )
    groups: list[tuple[str, list[dict[int, float]]]] = []
    for name in group_names:
        group_dir = os.path.join(bundle_root, name)
        trace_files = sorted(
            fn for fn in os.listdir(group_dir)
            if fn.startswith("trace_seed") and fn.endswith(".csv")
        )
        traces = [_read_trace_csv(os.path.join(group_dir, fn)) for fn in trace_files]
        if traces:
            groups.append((name, traces))
    if not groups:
        raise ConfigurationError(f"bundle at {bundle_root!r} has no traces")

    all_ks = sorted({k for _, traces in groups for trace in traces for k in trace})
    lines = [f"# bundle = {os.path.basename(os.path.normpath(bundle_root))}"]
    lines.append("log10_k," + ",".join(name for name, _ in groups))
    for k in all_ks:
        row = [_fmt(math.log10(k))]
        for _, traces in groups:
            dists = [trace[k] for trace in traces if k in trace]
            if not dists:
                row.append("nan")
                continue
            med = float(np.median(dists))
            row.append(_fmt(math.log10(med)) if med > 0.0 else _fmt(-16.0))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _group_sort_key(name: str):
    suffix = name[len("theta_"):]
    try:
        return (0, float(suffix))
    except ValueError:
        return (1, suffix)
