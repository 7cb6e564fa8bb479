"""Command-line front end.

    stochlab list
    stochlab <group> <experiment> [--seed N] [--replicas N] [--out json|csv]
             [--output PATH] [--plot PATH] [--tolerance X] [--<param> VALUE ...]

Exit status is 0 when every check passes, 1 when any check fails and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, field

from .errors import DomainError, ParameterError, UnknownExperiment
from .harness import GROUPS, ExperimentPlan, Report, lookup, registered, resolve_params, run
from .svgplot import emit_plot

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


@dataclass
class RunConfig:
    subcommand: str
    experiment: str | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    replicas: int | None = None
    out: str = "json"
    output: str | None = None
    plot: str | None = None
    tolerance: float | None = None


def _default_seed() -> int:
    raw = os.environ.get("STOCHLAB_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"STOCHLAB_SEED must be an integer, got {raw!r}") from None


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochlab", description="Stochastic simulation experiments.",
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="{list," + ",".join(GROUPS) + "}")
    ls = sub.add_parser("list", help="list registered experiments")
    ls.add_argument("group", nargs="?", choices=GROUPS)
    for group in GROUPS:
        # no abbreviations: --p must not be read as --plot
        p = sub.add_parser(group, help=f"run a {group} experiment", allow_abbrev=False)
        p.add_argument("experiment")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--out", choices=("json", "csv"), default="json")
        p.add_argument("--output", default=None, help="write the report here instead of stdout")
        p.add_argument("--plot", default=None, help="also write an SVG plot to this path")
        p.add_argument("--tolerance", type=float, default=None, help="override every check tolerance")
    return parser


def _split_params(parser, extras: list[str]) -> dict:
    params = {}
    i = 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--") or len(tok) == 2:
            parser.error(f"unexpected argument {tok!r}")
        name, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extras):
                parser.error(f"flag --{name} needs a value")
            value = extras[i + 1]
            i += 1
        params[name.replace("-", "_")] = value
        i += 1
    return params


def parse_args(argv: list[str]) -> RunConfig:
    """Validate ``argv`` into a :class:`RunConfig`; usage errors exit with status 2."""
    parser = _parser()
    ns, extras = parser.parse_known_args(argv)
    if ns.subcommand == "list":
        if extras:
            parser.error(f"unrecognized arguments: {' '.join(extras)}")
        return RunConfig("list", experiment=ns.group)
    try:
        exp = lookup(ns.experiment)
    except UnknownExperiment as exc:
        parser.error(str(exc))
    if exp.group != ns.subcommand:
        parser.error(f"experiment {exp.name!r} belongs to group {exp.group!r}")
    params = _split_params(parser, extras)
    try:
        resolve_params(exp, params)
    except (ParameterError, ValueError) as exc:
        parser.error(str(exc))
    if ns.replicas is not None and ns.replicas < 1:
        parser.error("--replicas must be >= 1")
    seed = ns.seed if ns.seed is not None else _default_seed()
    if not 0 <= seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    return RunConfig(ns.subcommand, exp.name, params, seed, ns.replicas, ns.out, ns.output, ns.plot, ns.tolerance)


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if report.table is not None:
        writer.writerow(report.table.columns)
        for row in report.table.rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    else:
        writer.writerow(["name", "expected", "observed", "tolerance", "pass"])
        for c in report.checks:
            writer.writerow([c.name, repr(c.expected), repr(c.observed), repr(c.tolerance), c.passed])
    return buf.getvalue()


def _list(group: str | None, stream) -> int:
    for exp in sorted(registered(group), key=lambda e: (e.group, e.name)):
        print(f"{exp.group}\t{exp.name}\t{exp.summary}", file=stream)
    return EXIT_OK


def execute(config: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if config.subcommand == "list":
        return _list(config.experiment, stdout)
    try:
        report = run(ExperimentPlan(config.experiment, config.params, config.replicas, config.seed))
    except (ParameterError, DomainError) as exc:
        print(f"stochlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if config.tolerance is not None:
        report = report.with_tolerance(config.tolerance)
    text = report.to_json() + "\n" if config.out == "json" else report_csv(report)
    if config.output:
        with open(config.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    if config.plot:
        try:
            emit_plot(report, config.plot)
        except (ParameterError, DomainError, OSError) as exc:
            print(f"stochlab: plot error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    return execute(parse_args(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    sys.exit(main())
