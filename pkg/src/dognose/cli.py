"""Command-line entry point.

Exit codes: 0 success, 2 bad input (unknown preset, bad config, malformed
trace, bad arguments), 3 simulation failure, 4 sweep budget exceeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

from . import config
from .breathing import Mode
from .errors import BudgetExceeded, DognoseError, SimulationError
from .metrics import SensorTrace, TraceFormatError, compare_schemes, compute_metrics, write_report
from .optimizer import Objective, ObjectiveKind, Param, ParamSpace, grid_sweep, nelder_mead
from .scenarios import ScenarioSpec, get_preset, list_presets, run_scenario

EXIT_OK, EXIT_INPUT, EXIT_SIM, EXIT_BUDGET = 0, 2, 3, 4

log = logging.getLogger("dognose")


class InputError(Exception):
    pass


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_spec(preset=None, config_path=None, overrides=()) -> ScenarioSpec:
    if (preset is None) == (config_path is None):
        raise InputError("give exactly one of --preset or --config")
    if preset is not None:
        try:
            spec = get_preset(preset)
        except KeyError:
            raise InputError(f"unknown preset {preset!r}; try `dognose presets`") from None
        data = spec.to_dict()
    else:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from None
    try:
        spec = config.apply_overrides(ScenarioSpec, data, overrides)
        spec.validate()
    except KeyError as exc:
        raise InputError(f"unknown setting {exc.args[0]}") from None
    except (TypeError, ValueError, DognoseError) as exc:
        raise InputError(f"invalid scenario: {exc}") from None
    return spec


def _metrics_for(spec: ScenarioSpec, trace: SensorTrace):
    period = None
    if spec.inhale_schedule.mode is Mode.PULSED:
        period = spec.inhale_schedule.period
    return compute_metrics(trace, motor_off_time=spec.motor_off_time,
                           background=spec.transport.background, expected_period=period)


def write_manifest(out: Path, files, spec, wall, extra=None):
    data = {"tool": "dognose", "version": _version(), "wall_clock_s": wall,
            "config": spec.to_dict() if spec is not None else None,
            "files": {name: _sha256(out / name) for name in sorted(files)}}
    data.update(extra or {})
    _json(out / "manifest.json", data)


def cmd_simulate(args) -> int:
    spec = load_spec(args.preset, args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snaps = out / "snapshots" if spec.snapshot_cadence else None
    t0 = time.perf_counter()
    result = run_scenario(spec, preset=args.preset, snapshot_dir=snaps)
    result.trace.to_csv(out / "trace.csv")
    _json(out / "ledger.json", result.ledger.as_dict())
    write_report(_metrics_for(spec, result.trace), out / "metrics.json")
    config.save(spec, out / "config.json")
    files = ["trace.csv", "ledger.json", "metrics.json", "config.json"]
    if snaps is not None:
        files += [f"snapshots/{p.name}" for p in sorted(snaps.iterdir())]
    write_manifest(out, files, spec, time.perf_counter() - t0, {"preset": args.preset})
    print(f"wrote {out} (peak {result.trace.reading.max():.6g} ug/m^3)")
    return EXIT_OK


def parse_param(text: str, need_step: bool) -> Param:
    """``name=lo:hi[:step]``, optionally ``name@dotted.path=lo:hi[:step]``."""
    key, sep, rng = text.partition("=")
    if not sep:
        raise InputError(f"parameter {text!r} is not name=lo:hi[:step]")
    name, _, path = key.partition("@")
    try:
        parts = [float(x) for x in rng.split(":")]
    except ValueError:
        raise InputError(f"parameter {text!r} has a non-numeric range") from None
    if len(parts) not in (2, 3) or (need_step and len(parts) != 3):
        raise InputError(f"parameter {text!r} needs lo:hi{':step' if need_step else '[:step]'}")
    p = Param(name.strip(), parts[0], parts[1], parts[2] if len(parts) == 3 else None,
              path.strip() or None)
    try:
        p.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return p


def _space_and_objective(args, base, need_step):
    if not args.param:
        raise InputError("at least one --param is required")
    space = ParamSpace([parse_param(t, need_step) for t in args.param])
    try:
        space.validate()
        for p in space.params:
            config.replace_path(base, p.target, p.lower)
    except KeyError as exc:
        raise InputError(f"unknown parameter path {exc.args[0]}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    obj = Objective(ObjectiveKind(args.objective), not args.minimize, args.threshold)
    try:
        obj.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return space, obj


def cmd_sweep(args) -> int:
    base = load_spec(args.preset, args.config, args.set)
    space, obj = _space_and_objective(args, base, need_step=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = grid_sweep(space, base, obj, budget=args.budget, workers=args.threads)
    res.to_csv(out / "sweep.csv")
    res.to_json(out / "sweep.json")
    config.save(base, out / "config.json")
    write_manifest(out, ["sweep.csv", "sweep.json", "config.json"], base,
                   time.perf_counter() - t0,
                   {"params": [vars(p) for p in space.params], "preset": args.preset})
    print(f"wrote {len(res.rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    base = load_spec(args.preset, args.config, args.set)
    space, obj = _space_and_objective(args, base, need_step=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = nelder_mead(space, base, obj, budget=args.budget, seed=args.seed,
                          workers=args.threads, log_path=out / "evaluations.jsonl")
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res.to_json(out / "opt.json")
    config.save(base, out / "config.json")
    write_manifest(out, ["opt.json", "config.json"], base, time.perf_counter() - t0,
                   {"params": [vars(p) for p in space.params], "seed": args.seed,
                    "preset": args.preset})
    state = "converged" if res.converged else "budget spent, not converged"
    print(f"best {res.best_value:.6g} at {res.best_params} ({state})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = Path(args.out)
    traces = []
    for path in args.traces:
        try:
            traces.append(SensorTrace.from_csv(path))
        except TraceFormatError as exc:
            raise InputError(f"{path}: {exc}") from None
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for name, trace in zip(_unique_names(args.traces), traces):
        reports[name] = compute_metrics(trace, threshold=args.threshold,
                                        motor_off_time=args.off_time,
                                        background=args.background,
                                        expected_period=args.period)
    if len(reports) == 1:
        write_report(next(iter(reports.values())), out / "metrics.json")
    else:
        for name, rep in reports.items():
            write_report(rep, out / f"metrics_{name}.json")
        compare_schemes(reports).to_csv(out / "comparison.csv")
    print(f"analyzed {len(reports)} trace(s) into {out}")
    return EXIT_OK


def _unique_names(paths):
    names = []
    for p in paths:
        p = Path(p)
        name = p.parent.name if p.stem == "trace" and p.parent.name else p.stem
        base, k = name, 2
        while name in names:
            name, k = f"{base}_{k}", k + 1
        names.append(name)
    return names


def cmd_presets(args) -> int:
    presets = list_presets()
    if args.dump:
        if args.dump not in presets:
            raise InputError(f"unknown preset {args.dump!r}")
        sys.stdout.write(config.dumps(presets[args.dump]))
        return EXIT_OK
    for name in presets:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweep/optimize evaluations")
    common.add_argument("--seed", type=int, default=0, help="seed for the optimizer start")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    src = scen.add_mutually_exclusive_group()
    src.add_argument("--preset", help="named scenario (see `dognose presets`)")
    src.add_argument("--config", help="scenario JSON file")
    scen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                      help="override a dotted scenario field, e.g. inhale_schedule.duty=0.6")
    scen.add_argument("--out", default="runs/out", help="output directory")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--param", action="append", default=[],
                        metavar="NAME=LO:HI[:STEP]",
                        help="parameter range; NAME is a shortcut (exhale_angle, snout_height, "
                             "inhale_duty, pulse_period, elevation, inhale_v_max, exhale_v_max) "
                             "or NAME@dotted.path")
    search.add_argument("--objective", default=ObjectiveKind.PEAK.value,
                        choices=[k.value for k in ObjectiveKind])
    search.add_argument("--threshold", type=float, default=None)
    search.add_argument("--minimize", action="store_true")

    ap = argparse.ArgumentParser(prog="dognose", description=__doc__.splitlines()[0],
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, scen], help="run one scenario")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common, scen, search], help="grid sweep")
    p.add_argument("--budget", type=int, default=1000, help="maximum number of grid points")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", parents=[common, scen, search], help="Nelder-Mead search")
    p.add_argument("--budget", type=int, default=60, help="maximum number of evaluations")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", parents=[common], help="metrics for trace CSV files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--off-time", type=float, default=None)
    p.add_argument("--period", type=float, default=None, help="expected cycle period (s)")
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--out", default="runs/analysis")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("presets", parents=[common], help="list presets or dump one as JSON")
    p.add_argument("--dump", metavar="NAME")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
