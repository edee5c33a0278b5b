#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Command line interface of the SAN engine

Example:
    san check models/ring.model
    san flatten models/ring.model --dump --out ring.dump
    san connectivity models/ring.model --count --csv connectivity.csv
    san simulate models/mm1.model --seed 1 --max-events 1000 --trace mm1.trace
    san simulate models/mm1.model --seed 1 --reward queue_length --runs 20
    san bench --topology ring --n 10,50,100,500 --mode both --repeats 5 --csv out.csv

Exit codes: 0 on success, 1 on model error, 2 on usage error.
"""
import argparse
import sys
from pathlib import Path

import pandas as pd

from src.san import __version__
from src.san.bench import MODES as BENCH_MODES, TOPOLOGIES, BenchSpec, Topology, run_bench
from src.san.compose import NARep, Rep
from src.san.connectivity import build_connectivity, connectivity_report, csv_row, format_report
from src.san.errors import ModelSyntaxError, SanError, ValidationError
from src.san.flatten import dump_flat_model, flatten
from src.san.modelfile import load
from src.san.rewards import estimate
from src.san.simulator import DEFAULT_MAX_INSTANTANEOUS_CHAIN, SimConfig, simulate, write_trace
from src.utils.functools import elapsed_str

# exit codes
EXIT_OK = 0
ERROR_MODEL = 1
ERROR_ARGS = 2


def parse_n_list(text):
    """Parse comma separated list of replica counts, e.g. '10,50,100'"""
    try:
        values = [int(item) for item in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'") from None
    if any(n < 1 for n in values) or values != sorted(values):
        raise argparse.ArgumentTypeError(f"list of n must be ascending and positive, got '{text}'")
    return tuple(values)


def root_shape(root):
    """Replica count and composition kind of the model root, for CSV rows"""
    if isinstance(root, NARep):
        return root.n, 'narep'
    if isinstance(root, Rep):
        return root.n, 'rep'
    return 1, type(root).__name__.lower()


def write_output(text, out_path):
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text, encoding='utf-8')


def append_csv(rows, csv_path, columns):
    """Append rows to CSV file, writing the header only when creating it"""
    csv_path = Path(csv_path)
    pd.DataFrame(rows, columns=columns).to_csv(csv_path, mode='a', index=False,
                                               header=not csv_path.exists())


def load_flat(args):
    bundle = load(args.model)
    fm = flatten(bundle.root, verbose=args.verbose)
    return bundle, fm


def cmd_check(args):
    bundle, fm = load_flat(args)
    print(f"{args.model}: OK, {fm.var_count} state variables, {len(fm.activities)} activity instances, "
          f"{len(bundle.rewards)} rewards", file=sys.stderr)
    return EXIT_OK


def cmd_flatten(args):
    _, fm = load_flat(args)
    if args.dump:
        write_output(dump_flat_model(fm), args.out)
    else:
        write_output(f"vars\t{fm.var_count}\nactivities\t{len(fm.activities)}\n", args.out)
    return EXIT_OK


def cmd_connectivity(args):
    bundle, fm = load_flat(args)
    report = connectivity_report(fm)
    if args.verbose:
        print(f"Built connectivity lists in {elapsed_str(report.build_time_ns)}", file=sys.stderr)
    if args.count or args.csv is None:
        sys.stdout.write(format_report(report))
    if args.csv is not None:
        n, mode = root_shape(bundle.root)
        row = csv_row(Path(args.model).stem, n, mode, report)
        append_csv([row], args.csv, list(row))
        if args.verbose:
            print(f"Appended row to '{args.csv}'", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    if args.max_events is not None and args.max_events < 1:
        print(f"error: --max-events must be at least 1, got {args.max_events}", file=sys.stderr)
        return ERROR_ARGS
    if args.max_time is not None and args.max_time < 0:
        print(f"error: --max-time must not be negative, got {args.max_time}", file=sys.stderr)
        return ERROR_ARGS
    if args.reward is not None and args.runs < 2:
        print(f"error: --runs must be at least 2 for a confidence interval, got {args.runs}", file=sys.stderr)
        return ERROR_ARGS
    bundle, fm = load_flat(args)
    cl = build_connectivity(fm)
    cfg = SimConfig(seed=args.seed, stop_after_events=args.max_events, stop_at_time=args.max_time,
                    mode='oracle' if args.oracle else 'connectivity',
                    max_instantaneous_chain=args.max_chain)

    if args.reward is not None:
        if args.reward not in bundle.rewards:
            print(f"error: no reward named '{args.reward}' in '{args.model}'", file=sys.stderr)
            return ERROR_MODEL
        rv = bundle.rewards[args.reward]
        if cfg.stop_at_time is None:
            cfg = cfg._replace(stop_at_time=rv.end)
        seeds = [args.seed + i for i in range(args.runs)]
        result = estimate(rv, fm, cl, seeds, cfg, n_jobs=args.jobs, verbose=args.verbose)
        print(f"{rv.name} {result}")
        return EXIT_OK

    if cfg.stop_after_events is None and cfg.stop_at_time is None:
        print("error: simulate needs --max-events or --max-time (or --reward)", file=sys.stderr)
        return ERROR_ARGS
    trajectory = simulate(fm, cl, cfg)
    if args.trace is not None:
        write_trace(trajectory, fm, Path(args.trace), verbose=args.verbose)
    print(f"status\t{trajectory.status}\n"
          f"events\t{len(trajectory.events)}\n"
          f"end_time\t{trajectory.end_time!r}\n"
          f"draws\t{trajectory.draws}")
    return EXIT_OK


def cmd_bench(args):
    spec = BenchSpec(Topology(args.topology, args.k), args.n, args.mode, args.repeats)
    try:
        df = run_bench(spec, verbose=args.verbose)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return ERROR_ARGS
    if args.csv is not None:
        append_csv(df, args.csv, list(df.columns))
    else:
        df.to_csv(sys.stdout, index=False)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog='san',
        description="Compose, flatten and simulate stochastic activity network models")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('-v', '--verbose', action='store_true',
                        help="print progress information to standard error")
    subparsers = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    check = subparsers.add_parser('check', help="parse and validate model file")
    check.add_argument('model', help="path to model file")
    check.set_defaults(func=cmd_check)

    flat = subparsers.add_parser('flatten', help="flatten composition into state variables")
    flat.add_argument('model', help="path to model file")
    flat.add_argument('--dump', action='store_true', help="print variable and activity tables")
    flat.add_argument('--out', metavar='FILE', help="write output to FILE instead of standard output")
    flat.set_defaults(func=cmd_flatten)

    conn = subparsers.add_parser('connectivity', help="build connectivity lists")
    conn.add_argument('model', help="path to model file")
    conn.add_argument('--count', action='store_true', help="print check count report")
    conn.add_argument('--csv', metavar='FILE', help="append CSV row to FILE")
    conn.set_defaults(func=cmd_connectivity)

    sim = subparsers.add_parser('simulate', help="simulate model, or estimate a reward")
    sim.add_argument('model', help="path to model file")
    sim.add_argument('--seed', type=int, required=True, help="seed of the random number stream")
    sim.add_argument('--max-events', type=int, metavar='N', help="stop after N events")
    sim.add_argument('--max-time', type=float, metavar='T', help="stop at simulation time T")
    sim.add_argument('--oracle', action='store_true',
                     help="re-examine all activities after every event")
    sim.add_argument('--trace', metavar='FILE', help="write one line per event to FILE")
    sim.add_argument('--max-chain', type=int, default=DEFAULT_MAX_INSTANTANEOUS_CHAIN,
                     help="maximum number of consecutive instantaneous firings "
                          "(default: %(default)s)")
    sim.add_argument('--reward', metavar='NAME', help="estimate reward variable NAME")
    sim.add_argument('--runs', type=int, default=10,
                     help="number of replications, at least 2, seeds S, S+1, ... (default: %(default)s)")
    sim.add_argument('--jobs', type=int, default=-1,
                     help="concurrent replications, -1 for all CPUs (default: %(default)s)")
    sim.set_defaults(func=cmd_simulate)

    bench = subparsers.add_parser('bench', help="measure connectivity construction scaling")
    bench.add_argument('--topology', choices=TOPOLOGIES, default='ring')
    bench.add_argument('--k', type=int, default=1, help="ring neighbours on each side (default: 1)")
    bench.add_argument('--n', type=parse_n_list, default=(10, 50, 100, 500),
                       help="comma separated replica counts (default: 10,50,100,500)")
    bench.add_argument('--mode', choices=BENCH_MODES + ('both',), default='both')
    bench.add_argument('--repeats', type=int, default=5)
    bench.add_argument('--csv', metavar='FILE', help="append rows to FILE instead of standard output")
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    """Run command line interface

    :param argv: command line arguments without program name, sys.argv[1:] if None
    :type argv: list[str] or None
    :return: exit code, 0 on success, 1 on model error, 2 on usage error
    :rtype: int
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # --help and --version exit with 0, usage errors with 2
        return err.code if isinstance(err.code, int) else ERROR_ARGS

    try:
        return args.func(args)
    except ModelSyntaxError as err:
        print(f"{getattr(args, 'model', '')}:{err.line}:{err.column}: syntax error: {err}", file=sys.stderr)
        if err.expected:
            print(f"expected one of: {', '.join(err.expected)}", file=sys.stderr)
    except ValidationError as err:
        filename = err.filename or getattr(args, 'model', None)
        for diag in err.diagnostics:
            print(diag.format(filename), file=sys.stderr)
    except SanError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
    return ERROR_MODEL


if __name__ == '__main__':
    sys.exit(main())
