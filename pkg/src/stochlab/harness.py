"""Experiment registry, plans and reports.

An experiment is a function ``(params, replicas, stream) -> Outcome``. The
harness resolves defaults, seeds a root stream, times the run and packages
the result as a :class:`Report`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ParameterError, UnknownExperiment
from .randomness import RandomStream


@dataclass(frozen=True)
class Check:
    name: str
    expected: float
    observed: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(abs(self.expected - self.observed) <= self.tolerance)

    def with_tolerance(self, tolerance: float) -> "Check":
        return Check(self.name, self.expected, self.observed, tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "expected": self.expected, "observed": self.observed,
                "tolerance": self.tolerance, "pass": self.passed}


def check_within(name, expected, observed, tolerance) -> Check:
    return Check(name, float(expected), float(observed), float(tolerance))


def check_at_most(name, value, bound) -> Check:
    """One-sided check ``value <= bound``, stored as its excess over the bound."""
    return Check(f"{name} (excess over bound {float(bound):.6g})", 0.0, max(float(value) - float(bound), 0.0), 0.0)


def check_at_least(name, value, bound) -> Check:
    return Check(f"{name} (shortfall below bound {float(bound):.6g})", 0.0, max(float(bound) - float(value), 0.0), 0.0)


@dataclass
class Table:
    columns: list[str]
    rows: list[list[float]]


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]


@dataclass
class Outcome:
    estimate: float
    stderr: float
    checks: list[Check]
    table: Table | None = None
    series: list[Series] = field(default_factory=list)
    loglog: bool = False
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentPlan:
    experiment: str
    params: dict = field(default_factory=dict)
    replicas: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.replicas is not None and self.replicas < 1:
            raise ParameterError("replicas must be >= 1")


@dataclass
class Report:
    experiment: str
    params: dict
    seed: int
    replicas: int
    estimate: float
    stderr: float
    checks: list[Check]
    elapsed_ms: float
    table: Table | None = None
    series: list[Series] = field(default_factory=list)
    loglog: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name_prefix: str) -> Check:
        for c in self.checks:
            if c.name.startswith(name_prefix):
                return c
        raise KeyError(name_prefix)

    def as_dict(self, include_elapsed: bool = True) -> dict:
        out = {
            "experiment": self.experiment,
            "params": self.params,
            "seed": self.seed,
            "replicas": self.replicas,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "checks": [c.as_dict() for c in self.checks],
        }
        if include_elapsed:
            out["elapsed_ms"] = self.elapsed_ms
        return out

    def to_json(self, include_elapsed: bool = True) -> str:
        return json.dumps(_finite(self.as_dict(include_elapsed)), allow_nan=False, indent=2)

    def with_tolerance(self, tolerance: float) -> "Report":
        clone = Report(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        clone.checks = [c.with_tolerance(tolerance) for c in self.checks]
        return clone


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError(f"non-finite value {obj} cannot be serialized")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


@dataclass(frozen=True)
class Experiment:
    name: str
    group: str
    func: Callable[[dict, int, RandomStream], Outcome]
    defaults: dict
    replicas: int
    summary: str


REGISTRY: dict[str, Experiment] = {}
GROUPS = ("sample", "exact", "limits", "macro", "mcmc", "sde", "graph")


def experiment(name: str, group: str, replicas: int = 1, **defaults):
    if group not in GROUPS:
        raise ValueError(f"unknown group {group}")

    def register(func):
        doc = (func.__doc__ or "").strip().splitlines()
        REGISTRY[name] = Experiment(name, group, func, defaults, replicas, doc[0] if doc else "")
        return func

    return register


def lookup(name: str) -> Experiment:
    _load_all()
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownExperiment(f"unknown experiment {name!r}") from None


def registered(group: str | None = None) -> list[Experiment]:
    _load_all()
    return [e for e in REGISTRY.values() if group is None or e.group == group]


def _load_all():
    from . import experiments  # noqa: F401  (registers everything)


def _coerce(value, default):
    if isinstance(value, str) and default is not None and not isinstance(default, str):
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(value)) if "e" in value.lower() else int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, (list, tuple)):
            return type(default)(float(v) for v in value.split(","))
    return value


def resolve_params(exp: Experiment, params: dict) -> dict:
    unknown = set(params) - set(exp.defaults)
    if unknown:
        raise ParameterError(f"unknown parameter(s) for {exp.name}: {', '.join(sorted(unknown))}")
    merged = dict(exp.defaults)
    for k, v in params.items():
        merged[k] = _coerce(v, exp.defaults[k])
    return merged


def run(plan: ExperimentPlan) -> Report:
    exp = lookup(plan.experiment)
    params = resolve_params(exp, plan.params)
    replicas = plan.replicas if plan.replicas is not None else exp.replicas
    stream = RandomStream(plan.seed)
    start = time.perf_counter()
    outcome = exp.func(params, replicas, stream)
    elapsed = (time.perf_counter() - start) * 1000.0
    return Report(
        experiment=exp.name,
        params={k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()},
        seed=plan.seed,
        replicas=replicas,
        estimate=float(outcome.estimate),
        stderr=float(outcome.stderr),
        checks=outcome.checks,
        elapsed_ms=round(elapsed, 3),
        table=outcome.table,
        series=outcome.series,
        loglog=outcome.loglog,
        extra=outcome.extra,
    )


def run_experiment(name: str, *, seed: int = 0, replicas: int | None = None, **params) -> Report:
    return run(ExperimentPlan(name, params, replicas, seed))
