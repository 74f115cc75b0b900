"""Plan, simulate and tune a PMSM-driven linear actuator from the command line.

Subcommands::

    emla-ctrl plan WAYPOINTS        quintic profile CSV and jerk report
    emla-ctrl simulate              closed-loop run, trace CSV and metrics
    emla-ctrl optimize              Jaya gain tuning, gains file and convergence CSV
    emla-ctrl compare               tune both controllers on one budget, print the table

Exit codes: 0 success, 2 input error, 3 barrier violation under the abort
policy, 4 non-finite simulation state.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .exceptions import BarrierViolation, ConfigError, NumericalError, TrajectoryError
from .optimizer import gains_from_vector, tune
from .sim import Metrics, compute_metrics, metrics_table, run
from .trajectory import build_piecewise, evaluate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_VIOLATION = 3
EXIT_NUMERIC = 4

SEED_ENV = "EMLA_CTRL_SEED"
LABELS = {"drsblf": "DRS-BLF Control", "pid": "PID Control"}

log = logging.getLogger("emla_ctrl")


class InputError(Exception):
    """Bad command-line input that is not a config parse error."""


@dataclass(frozen=True)
class RunManifest:
    command: str
    scenario: Path = None
    out: Path = Path(".")
    seed: int = None
    quiet: bool = False

    def __post_init__(self):
        if self.scenario is not None and not Path(self.scenario).is_file():
            raise InputError(f"scenario file not found: {self.scenario}")
        out = Path(self.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise InputError(f"output directory is not writable: {out}")


def resolve_seed(flag, environ=None):
    """``--seed`` if given, else ``$EMLA_CTRL_SEED``, else ``None`` (file value)."""
    if flag is not None:
        return flag
    raw = (os.environ if environ is None else environ).get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _manifest(args):
    return RunManifest(args.command, getattr(args, "scenario", None), Path(args.out),
                       resolve_seed(getattr(args, "seed", None)), args.quiet)


def _say(args, text):
    if not args.quiet:
        print(text)


def _load(manifest, args):
    conf = cfgmod.load_config(manifest.scenario)
    scenario = cfgmod.scenario_from_config(conf)
    if getattr(args, "controller", None):
        scenario = scenario.with_(controller=args.controller)
    if manifest.seed is not None:
        scenario = scenario.with_(seed=manifest.seed)
    return conf, scenario


def _jaya(conf, kind, scenario, manifest, args):
    jaya, warm = cfgmod.jaya_from_config(conf, kind, scenario)
    if manifest.seed is not None:
        jaya = replace(jaya, seed=manifest.seed)
    if args.generations is not None:
        if args.generations < 0:
            raise InputError("--generations must be >= 0")
        jaya = replace(jaya, generations=args.generations)
    return jaya, warm


# ---------------------------------------------------------------------------
# subcommands

def cmd_plan(args):
    manifest = RunManifest("plan", None, Path(args.out), None, args.quiet)
    path = Path(args.waypoints)
    if not path.is_file():
        raise InputError(f"waypoint file not found: {path}")
    if not args.rate > 0:
        raise InputError("--rate must be > 0")
    traj = build_piecewise(cfgmod.load_waypoints(path))
    n = int(round(traj.duration * args.rate))
    times = traj.t_start + np.arange(n + 1) / args.rate
    rows = [(float(t),) + tuple(evaluate(traj, float(t))[:4]) for t in times]
    lines = ["t,pos,vel,acc,jerk"] + [",".join(map(repr, r)) for r in rows]
    out = manifest.out / "profile.csv"
    out.write_text("\n".join(lines) + "\n")
    jerk = traj.max_abs_jerk()
    _say(args, f"segments={len(traj.segments)}")
    _say(args, f"duration={traj.duration!r}")
    _say(args, f"max_abs_jerk={jerk!r}")
    _say(args, f"profile={out}")
    return EXIT_OK


def _write_trace(trace, manifest, name="trace.csv"):
    path = manifest.out / name
    trace.to_csv(path)
    return path


def _metrics_text(label, metrics: Metrics):
    return metrics_table({label: metrics}) + "\n\n" + metrics.key_value_block()


def cmd_simulate(args):
    manifest = _manifest(args)
    _, scenario = _load(manifest, args)
    try:
        trace = run(scenario)
    except BarrierViolation as exc:
        if exc.trace is not None:
            _write_trace(exc.trace, manifest)
        print(f"barrier violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    path = _write_trace(trace, manifest)
    metrics = compute_metrics(trace, band=scenario.convergence_band)
    text = _metrics_text(LABELS[scenario.controller], metrics)
    (manifest.out / "metrics.txt").write_text(text + "\n")
    if trace.envelope_report is not None and not trace.envelope_report.passed:
        print(trace.envelope_report.summary(), file=sys.stderr)
    _say(args, text)
    _say(args, f"trace={path}")
    return EXIT_OK


def _gains_section(kind, vec):
    gains = gains_from_vector(kind, vec)
    return cfgmod.format_section(f"gains.{kind}", gains.as_dict())


def cmd_optimize(args):
    manifest = _manifest(args)
    conf, scenario = _load(manifest, args)
    kind = args.controller or "drsblf"
    jaya, warm = _jaya(conf, kind, scenario, manifest, args)

    def report(g, best, mean, worst):
        _say(args, f"generation={g} best_fx={best!r}")

    result = tune(scenario, kind, jaya, warm_start=warm, jobs=args.jobs, callback=report)
    (manifest.out / "gains.ini").write_text(_gains_section(kind, result.best))
    (manifest.out / "convergence.csv").write_text(result.history_csv())
    _say(args, _gains_section(kind, result.best).rstrip())
    _say(args, f"best_fx={result.best_fx!r}")
    _say(args, f"evaluations={result.evaluations}")
    return EXIT_OK


def cmd_compare(args):
    manifest = _manifest(args)
    conf, scenario = _load(manifest, args)
    columns, sections = {}, []
    for kind in ("drsblf", "pid"):
        if args.no_tune:
            sc = scenario.with_(controller=kind)
        else:
            jaya, warm = _jaya(conf, kind, scenario, manifest, args)
            result = tune(scenario, kind, jaya, warm_start=warm, jobs=args.jobs)
            gains = gains_from_vector(kind, result.best)
            sc = (scenario.with_(controller=kind, gains=gains) if kind == "drsblf"
                  else scenario.with_(controller=kind, pid_gains=gains))
            (manifest.out / f"convergence_{kind}.csv").write_text(result.history_csv())
            sections.append(_gains_section(kind, result.best))
        trace = run(sc)
        _write_trace(trace, manifest, f"trace_{kind}.csv")
        columns[LABELS[kind]] = compute_metrics(trace, band=scenario.convergence_band)
    table = metrics_table(columns)
    (manifest.out / "compare.txt").write_text(table + "\n")
    if sections:
        (manifest.out / "gains.ini").write_text("\n".join(sections))
    _say(args, table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--quiet", action="store_true", help="suppress stdout reports")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", type=Path, default=None,
                      help="scenario file; missing sections fall back to the packaged desk scenario")
    scen.add_argument("--seed", type=int, default=None,
                      help=f"seed override (fallback: ${SEED_ENV}, then the file)")

    tuning = argparse.ArgumentParser(add_help=False)
    tuning.add_argument("--jobs", type=int, default=1, help="parallel objective evaluations")
    tuning.add_argument("--generations", type=int, default=None, help="override [jaya] generations")

    parser = argparse.ArgumentParser(prog="emla-ctrl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="quintic trajectory profile")
    p.add_argument("waypoints", help="waypoint file (bare 't pos vel acc' lines or a scenario file)")
    p.add_argument("--rate", type=float, default=1000.0, help="sample rate of the CSV [Hz]")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common, scen], help="closed-loop simulation")
    p.add_argument("--controller", choices=("drsblf", "pid"), default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", parents=[common, scen, tuning], help="Jaya gain tuning")
    p.add_argument("--controller", choices=("drsblf", "pid"), default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare", parents=[common, scen, tuning],
                       help="tune both controllers on one budget and tabulate")
    p.add_argument("--no-tune", action="store_true", help="compare the gains in the scenario file")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"input error:\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, TrajectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BarrierViolation as exc:
        print(f"barrier violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
