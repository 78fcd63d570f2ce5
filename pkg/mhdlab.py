#!/usr/bin/env python3
import os
import re
import sys
import json
import argparse
import datetime

from mhdlab_modules import config
from mhdlab_modules.config import load_config
from mhdlab_modules.errors import MhdLabError, ConfigError
from mhdlab_modules.utils import Color, log_action, set_log_file, say, atomic_write, thread_cap, RICH_AVAILABLE
from mhdlab_modules.spectral import Grid, read_snapshot
from mhdlab_modules.littlewood_paley import besov_norm, hat_besov_norm, hybrid_norm
from mhdlab_modules.linear import (
    dispersion_rows, dispersion_csv, check_dispersion_identities, parabolic_count_estimate, PARABOLIC,
)
from mhdlab_modules.solver import MHDState, Trajectory, run, verify_run
from mhdlab_modules.diagnostics import NormLedger, EnergyFunctionalParams, write_report
from mhdlab_modules.sweeps import run_paraproduct_plain
from mhdlab_modules.tui import (
    banner, print_table, print_norm_table, print_verify_table, simulation_progress, run_paraproduct_rich,
)

# --- RICH TUI INITIALIZATION ---
if RICH_AVAILABLE:
    from rich.console import Console
    console = Console()
    # Share console back to modules
    import mhdlab_modules.utils as utils
    utils.console = console
else:
    console = None

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED_RUN = 2

NORM_SPEC = re.compile(r'^(B|BH|HB):([-+0-9.eE]+)(?:,([-+0-9.eE]+))?$')
NORM_FIELDS = ('u', 'H', 'A')
BESOV_USAGE = "usage: mhdlab besov SNAPSHOT NORM [NORM ...]   where NORM is B:s, BH:s or HB:s,t"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mhdlab",
        description="Pseudo-spectral 2D MHD near a uniform magnetic field, with Besov diagnostics")
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')

    p = sub.add_parser('simulate', help="Integrate a configured run and write snapshots and a ledger")
    p.add_argument('config', help="Config file (key = value lines)")
    p.add_argument('--output-dir', help="Override output.dir from the config")
    p.add_argument('--strict', action='store_true', help="Raise on failure instead of writing a truncated run")

    p = sub.add_parser('linear-map', help="Tabulate the linear dispersion relation on a grid")
    p.add_argument('--n', type=int, default=64, help="Grid points per axis (even)")
    p.add_argument('--length', type=float, default=config.DEFAULT_LENGTH, help="Period of both axes")
    p.add_argument('--output', default=config.DISPERSION_NAME, help="CSV destination")

    p = sub.add_parser('besov', help="Besov norms of a snapshot (B:s, BH:s, HB:s,t)")
    p.add_argument('snapshot', help="Snapshot file")
    p.add_argument('norms', nargs='+', help="Norm specifiers, e.g. B:1 BH:0 HB:0,1")
    p.add_argument('--field', choices=NORM_FIELDS + ('all',), default='all', help="Field to measure")

    p = sub.add_parser('paraproduct-check', help="Bony identity and product-law sweeps")
    p.add_argument('--pairs', type=int, default=config.DEFAULT_SWEEP_PAIRS, help="Random pairs per grid")
    p.add_argument('--grids', type=int, nargs='+', default=list(config.DEFAULT_SWEEP_GRIDS), help="Grid sizes")
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('verify', help="Re-check invariants and the ledger of a finished run")
    p.add_argument('run_dir')

    p = sub.add_parser('report', help="Write summary, budget and block tables for a run")
    p.add_argument('run_dir')
    return parser


def parse_norm_spec(text):
    """'B:s' -> ('B', s, None); 'BH:s' -> ('BH', s, None); 'HB:s,t' -> ('HB', s, t)."""
    match = NORM_SPEC.match(text.strip())
    if not match:
        raise ValueError(f"unknown norm specifier '{text}'")
    kind, s, t = match.groups()
    if (kind == 'HB') != (t is not None):
        raise ValueError(f"'{kind}' takes {'two exponents' if kind == 'HB' else 'one exponent'}: '{text}'")
    return kind, float(s), float(t) if t is not None else None


def evaluate_norm(field, spec):
    kind, s, t = spec
    if kind == 'B':
        return besov_norm(field, s)
    if kind == 'BH':
        return hat_besov_norm(field, s)
    return hybrid_norm(field, s, t)


def cmd_simulate(args):
    try:
        cfg = load_config(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
    except ConfigError as e:
        say(f"Config error: {e}", 'fail')
        return EXIT_USAGE

    banner(f"simulate {cfg.n1}x{cfg.n2}, t_end={cfg.t_end:g}, init={cfg.init_kind}")
    started = datetime.datetime.now().isoformat(timespec='seconds')
    with simulation_progress(cfg.n_steps) as progress_callback:
        try:
            result = run(cfg, progress_callback, strict=args.strict)
        except OSError as e:
            say(f"Cannot write to {cfg.output_dir}: {e}", 'fail')
            return EXIT_USAGE
    finished = datetime.datetime.now().isoformat(timespec='seconds')

    files = sorted(name for name in os.listdir(cfg.output_dir)
                   if name != config.MANIFEST_NAME and not name.endswith('.tmp'))
    manifest = {
        'version': config.VERSION,
        'config': cfg.to_dict(),
        'seed': cfg.seed,
        'threads': thread_cap(),
        'started': started,
        'finished': finished,
        'status': result.status,
        'failure_stage': result.failure_stage,
        'files': files,
    }
    atomic_write(os.path.join(cfg.output_dir, config.MANIFEST_NAME), json.dumps(manifest, indent=2) + "\n")

    if result.ok:
        say(f"Run completed: {len(result.trajectory)} snapshots, {len(result.ledger)} ledger rows in {cfg.output_dir}", 'ok')
        return EXIT_OK
    if result.failure_stage == 'initialization':
        say(f"Initial data rejected before the first step (outside the perturbative regime): {result.error}", 'fail')
        say("Lower init.amplitude and run again", 'info')
    else:
        say(f"Run truncated mid-integration: {type(result.error).__name__}: {result.error}", 'fail')
    say(f"See {os.path.join(cfg.output_dir, config.FAILURE_REPORT_NAME)}", 'info')
    return EXIT_FAILED_RUN


def cmd_linear_map(args):
    try:
        grid = Grid.square(args.n, args.length)
    except MhdLabError as e:
        say(f"Invalid grid: {e}", 'fail')
        return EXIT_USAGE
    rows = dispersion_rows(grid)
    if not atomic_write(args.output, dispersion_csv(rows)):
        return EXIT_USAGE
    parabolic = sum(1 for row in rows if row[-1] == PARABOLIC)
    deviation = check_dispersion_identities(rows)
    print_table("Linear dispersion", ("Quantity", "Value"), [
        ("modes", str(len(rows))),
        ("parabolic", str(parabolic)),
        ("parabolic (area estimate)", f"{parabolic_count_estimate(grid):.1f}"),
        ("damped", str(len(rows) - parabolic)),
        ("identity deviation", f"{deviation:.3e}"),
    ])
    log_action("LINEAR_MAP", f"n={args.n} length={args.length!r} rows={len(rows)} parabolic={parabolic} -> {args.output}")
    if deviation > 1e-12:
        say(f"Eigenvalue identities off by {deviation:.3e}", 'fail')
        return EXIT_USAGE
    say(f"Wrote {args.output}", 'ok')
    return EXIT_OK


def cmd_besov(args):
    try:
        specs = [(text, parse_norm_spec(text)) for text in args.norms]
    except ValueError as e:
        say(str(e), 'fail')
        print(BESOV_USAGE)
        return EXIT_USAGE
    try:
        grid, t, fields = read_snapshot(args.snapshot)
        state = MHDState.from_fields(fields, t)
        names = NORM_FIELDS if args.field == 'all' else (args.field,)
        results = []
        for name in names:
            field = getattr(state, name)
            for text, spec in specs:
                results.append((name, text, evaluate_norm(field, spec)))
    except MhdLabError as e:
        say(f"{type(e).__name__}: {e}", 'fail')
        return EXIT_USAGE
    print_norm_table(results)
    log_action("BESOV", f"{args.snapshot} t={t:.6g} " + " ".join(f"{n}:{s}={v:.6e}" for n, s, v in results))
    return EXIT_OK


def cmd_paraproduct_check(args):
    grids = tuple(args.grids)
    if RICH_AVAILABLE and console:
        ok = run_paraproduct_rich(grids, args.pairs, args.seed)
    else:
        ok = run_paraproduct_plain(grids, args.pairs, args.seed)
    return EXIT_OK if ok else EXIT_USAGE


def cmd_verify(args):
    if not os.path.isdir(args.run_dir):
        say(f"No such run directory: {args.run_dir}", 'fail')
        return EXIT_USAGE
    try:
        checks = verify_run(args.run_dir)
    except MhdLabError as e:
        say(f"{type(e).__name__}: {e}", 'fail')
        return EXIT_USAGE
    print_verify_table(checks)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        say(f"Failed: {', '.join(failed)}", 'fail')
        return EXIT_USAGE
    say("All checks passed", 'ok')
    return EXIT_OK


def cmd_report(args):
    try:
        ledger = NormLedger.read(os.path.join(args.run_dir, config.LEDGER_NAME))
        trajectory = Trajectory(args.run_dir)
        cfg = trajectory.config()
        params = None
        if cfg is not None:
            params = EnergyFunctionalParams(cfg.iota)
        written = write_report(args.run_dir, trajectory, ledger, params)
    except MhdLabError as e:
        say(f"{type(e).__name__}: {e}", 'fail')
        return EXIT_USAGE
    with open(os.path.join(args.run_dir, config.SUMMARY_NAME), 'r') as f:
        print(f.read(), end='')
    say(f"Wrote {len(written)} files to {args.run_dir}", 'ok')
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'linear-map': cmd_linear_map,
    'besov': cmd_besov,
    'paraproduct-check': cmd_paraproduct_check,
    'verify': cmd_verify,
    'report': cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    if args.command != 'simulate':
        set_log_file(config.LOG_FILE)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print(f"\n{Color.WARNING}Interrupted.{Color.ENDC}")
        sys.exit(EXIT_USAGE)
