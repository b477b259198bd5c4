"""``vaf`` command line: model curves, claim tables, fitting, calibration, simulation.

Exit codes: 0 success, 2 usage or configuration error, 3 internal error.
"""

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analytic_model import (
    RampUpParams,
    optimal_job_count,
    pull_time_to_results,
    push_time_to_results,
)
from .csvout import render_csv, scenario_hash
from .errors import ConvergenceError, InputError, SimulationError, VafError
from .fitting import RampUpSample, calibrate_from_claims, fit_rampup
from .presets import rampup_preset
from .scenario import load_scenario, run_scenario
from .sim_engine import write_trace_csv
from .units import SECONDS, format_hms, parse_duration, to_unit

log = logging.getLogger("vaf")


class UsageError(InputError):
    pass


def _emit(name, header, rows, meta, out):
    text = render_csv(header, rows, *meta)
    if out is None:
        sys.stdout.write(text)
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    path.write_text(text)
    return path


def _params_from_args(args):
    """Ramp-up parameters in rates per ``args.unit``."""
    if args.p0 is not None or args.p1 is not None:
        if args.preset:
            raise UsageError("give either --preset or --p0/--p1")
        if args.p0 is None:
            raise UsageError("--p0 is required with --p1")
        return RampUpParams(args.p0, args.p1 or 0.0)
    return rampup_preset(args.preset or "cern-2013").rescaled(SECONDS[args.unit])


def _meta(args, fields):
    return scenario_hash({k: getattr(args, k) for k in fields}), args.seed


def cmd_model(args):
    params = _params_from_args(args)
    t_min = to_unit(parse_duration(args.t_min, args.unit), args.unit)
    t_max = to_unit(parse_duration(args.t_max, args.unit), args.unit)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if not (0 < t_min <= t_max):
        raise UsageError("T range must be positive and ascending")
    grid = [t_min] if args.samples == 1 else list(np.geomspace(t_min, t_max, args.samples))
    rows = []
    for T in grid:
        T = float(T)
        pull = pull_time_to_results(params, T)
        push = push_time_to_results(params, T)
        rows.append((T, pull, push, pull / push, optimal_job_count(params, T)))
    meta = _meta(args, ("preset", "p0", "p1", "unit", "t_min", "t_max", "samples"))
    _emit("model", ["T", "t_pull", "t_push", "ratio", "n_optimal"], rows, meta, args.out)


def cmd_compare(args):
    if args.p0 is None and args.p1 is None:
        rampup_preset(args.preset or "cern-2013")  # unknown names are usage errors
    params = _params_from_args(args)
    rows = []
    for item in args.T:
        T_seconds = parse_duration(item, args.unit)
        if T_seconds <= 0:
            raise UsageError(f"T must be > 0, got {item!r}")
        T = to_unit(T_seconds, args.unit)
        pull = pull_time_to_results(params, T)
        push = push_time_to_results(params, T)
        rows.append((
            T, pull, push, (1.0 - pull / push) * 100.0,
            format_hms(pull * SECONDS[args.unit]), format_hms(push * SECONDS[args.unit]),
        ))
    meta = _meta(args, ("preset", "p0", "p1", "unit", "T"))
    _emit("compare", ["T", "t_pull", "t_push", "speedup_pct", "t_pull_hms", "t_push_hms"],
          rows, meta, args.out)


def read_samples(path):
    """Read a ``t,n`` CSV (seconds, jobs); errors name the offending line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    samples = []
    with fh:
        lines = (line for line in fh)
        reader = csv.reader(lines)
        header = None
        for row in reader:
            lineno = reader.line_num
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if header != ["t", "n"]:
                    raise UsageError(f"{path}:{lineno}: expected header 't,n', got {','.join(row)!r}")
                continue
            if len(row) != 2:
                raise UsageError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                t, n = float(row[0]), float(row[1])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: not a number in {','.join(row)!r}") from None
            if not (np.isfinite(t) and np.isfinite(n)) or t < 0 or n < 0:
                raise UsageError(f"{path}:{lineno}: t and n must be finite and >= 0")
            if samples and t <= samples[-1].t:
                raise UsageError(f"{path}:{lineno}: t must be strictly increasing")
            samples.append(RampUpSample(t, n))
    if header is None:
        raise UsageError(f"{path}: empty file")
    if len(samples) < 3:
        raise UsageError(f"{path}: need at least 3 samples, got {len(samples)}")
    return samples


def cmd_fit(args):
    samples = read_samples(args.samples)
    try:
        fit = fit_rampup(samples)
    except InputError as exc:
        raise UsageError(f"{args.samples}: {exc}") from None
    p = fit.params
    rows = [(p.p0, p.p1, fit.residual_norm, p.max_jobs, fit.stderr[0], fit.stderr[1], fit.iterations)]
    meta = (scenario_hash(Path(args.samples).read_bytes()), args.seed)
    _emit("fit", ["p0", "p1", "residual_norm", "max_jobs", "p0_stderr", "p1_stderr", "iterations"],
          rows, meta, args.out)


def cmd_calibrate(args):
    T, t_pull, t_push = (to_unit(parse_duration(v, args.unit), args.unit)
                         for v in (args.T, args.t_pull, args.t_push))
    if t_pull >= t_push:
        raise UsageError(f"t_pull ({args.t_pull}) must be smaller than t_push ({args.t_push})")
    cal = calibrate_from_claims(T, t_pull, t_push, target_max_jobs=args.target_max_jobs)
    p = cal.params
    rows = [(args.name, p.p0, p.p1, p.max_jobs, f"1/{args.unit}", cal.residuals[0], cal.residuals[1])]
    meta = _meta(args, ("T", "t_pull", "t_push", "unit", "target_max_jobs", "name"))
    _emit("calibrate", ["name", "p0", "p1", "max_jobs", "rate_unit", "pull_residual", "push_residual"],
          rows, meta, args.out)


def _parse_overrides(items):
    overrides = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def simulate_one(source, overrides, seed, out, trace):
    """Run one scenario and write its CSVs; returns the summary lines."""
    scn = load_scenario(source, overrides)
    if seed is not None:
        scn.seed = seed
    if trace:
        scn.trace = True
    result = run_scenario(scn)
    out = out if out is not None else scn.output_dir
    lines = [f"[{scn.name}] {line}" for line in result.summary]
    if out is not None:
        for name, (header, rows) in result.tables.items():
            _emit(name, header, rows, (scn.hash, scn.seed), out)
        if scn.trace and result.trace is not None:
            path = Path(out) / "trace.csv"
            with path.open("w") as fh:
                fh.write(f"# scenario={scn.hash} seed={scn.seed} version={__version__}\n")
                write_trace_csv(result.trace, fh)
        lines.append(f"[{scn.name}] wrote {', '.join(sorted(result.tables))} to {out}")
    return lines


def cmd_simulate(args):
    overrides = _parse_overrides(args.set)
    sources = args.scenario
    if len(sources) > 1 and args.out is None:
        raise UsageError("--out is required when simulating several scenarios")

    def out_for(src):
        if args.out is None:
            return None
        return args.out if len(sources) == 1 else str(Path(args.out) / Path(src).stem)

    if args.sweep and len(sources) > 1:
        with ProcessPoolExecutor() as pool:
            futures = [pool.submit(simulate_one, s, overrides, args.seed, out_for(s), args.trace)
                       for s in sources]
            results = [f.result() for f in futures]
    else:
        results = [simulate_one(s, overrides, args.seed, out_for(s), args.trace) for s in sources]
    for lines in results:
        for line in lines:
            print(line)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: scenario's, else 0)")
    common.add_argument("--out", default=None, help="directory for CSV output (default: stdout)")

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--preset", default=None, help="ramp-up preset (default cern-2013)")
    model_args.add_argument("--p0", type=float, default=None, help="job arrival rate per --unit")
    model_args.add_argument("--p1", type=float, default=None, help="saturation rate per --unit")
    model_args.add_argument("--unit", choices=sorted(SECONDS), default="h",
                            help="time unit for rates, inputs without suffix and outputs")

    parser = argparse.ArgumentParser(prog="vaf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vaf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", parents=[common, model_args], help="pull/push curves over a T range")
    p.add_argument("--t-min", default="1h")
    p.add_argument("--t-max", default="240h")
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("compare", parents=[common, model_args], help="time-to-results claim table")
    p.add_argument("T", nargs="*", default=["48h", "240h"], help="serialized work, e.g. 240h")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fit", parents=[common], help="fit ramp-up parameters to a t,n trace")
    p.add_argument("samples", help="CSV file with header t,n (seconds, jobs)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", parents=[common], help="site parameters from reported timings")
    p.add_argument("T")
    p.add_argument("t_pull")
    p.add_argument("t_push")
    p.add_argument("--unit", choices=sorted(SECONDS), default="h")
    p.add_argument("--target-max-jobs", type=float, default=100.0,
                   help="pick the root whose job ceiling is closest to this")
    p.add_argument("--name", default="calibrated")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", parents=[common], help="run scenario files or presets")
    p.add_argument("scenario", nargs="+", help="scenario file or preset name")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a scenario key")
    p.add_argument("--trace", action="store_true", help="also write the event trace")
    p.add_argument("--sweep", action="store_true", help="run several scenarios in parallel")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "simulate" and args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except (SimulationError, ConvergenceError) as exc:
        print(f"vaf: internal error: {exc}", file=sys.stderr)
        return 3
    except (InputError, VafError) as exc:
        print(f"vaf: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
