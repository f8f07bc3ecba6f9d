"""
Command-line driver.

Exit codes: 0 success, 2 configuration error (including an output
directory that cannot be created or written), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from cdma_otfs.channel import apply_paths, complex_gaussian, sample_sensing_channel
from cdma_otfs.config import PRESETS, load_runs
from cdma_otfs.crb import CrbInputs, crb_range, crb_velocity
from cdma_otfs.errors import ConfigError, InvalidParameterError, NumericFailure
from cdma_otfs.frame import map_bits_qpsk, spread
from cdma_otfs.montecarlo import (
    STREAM_CHANNEL,
    STREAM_NOISE,
    _frame_bits,
    derive_rng_stream,
    plan_for,
    run_ber_sweep,
    run_rmse_sweep,
    sensing_n0,
    write_result,
)
from cdma_otfs.sequences import build_sequence_matrix, write_sequence_csv
from cdma_otfs.sensing import build_expanded_tx, correlation_surface, write_imaging_csv

log = logging.getLogger("cdma_otfs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class OutputError(Exception):
    pass


def _add_config_args(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="bundled parameter set")
    p.add_argument("--override", nargs="+", action="extend", default=[], metavar="KEY=VALUE",
                   help="override config fields, e.g. M=16 N=16 max_bits=2e5")
    p.add_argument("--seed", type=int, help="master seed (overrides sweep.seed)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cdma-otfs", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("ber", "BER sweep per run"), ("rmse", "sensing RMSE sweep per run")):
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--timing", action="store_true",
                       help="fill the seconds column (breaks byte-identical reruns)")

    p = sub.add_parser("crb", help="print average CRB per Eb/N0 point")
    _add_config_args(p)

    p = sub.add_parser("dump-seq", help="write a sequence matrix as CSV")
    p.add_argument("--family", required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--n-mult", type=int, default=1)
    p.add_argument("--out", default="results")

    p = sub.add_parser("dump-imaging", help="write one |h|^2 correlation surface as CSV")
    _add_config_args(p)
    p.add_argument("--out", default="results")
    p.add_argument("--run", type=int, default=0, help="index into the run list")
    p.add_argument("--ebno-index", type=int, default=0)
    p.add_argument("--frame", type=int, default=0)
    return parser


def _prepare_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise OutputError(f"output directory {path} is not writable")
    return path


def _runs(args, kind):
    return load_runs(kind, args.config, args.preset, args.override, args.seed)


def cmd_sweep(args, kind):
    runs = _runs(args, kind)
    out = _prepare_out(args.out)
    sweep = run_ber_sweep if kind == "ber" else run_rmse_sweep
    cache = {}
    results = []
    # every run computes before anything is written, so a failure leaves no partial set
    for run in runs:
        key = run.config
        if key not in cache:
            log.info("running %s %s", kind, run.name)
            cache[key] = sweep(run.config, workers=args.workers)
        results.append((run, cache[key]))
    for run, result in results:
        path = os.path.join(out, f"{kind}_{run.name}.csv")
        write_result(result, path, record_timing=args.timing)
        print(path)
    return EXIT_OK


def crb_rows(config):
    """(Eb/N0, range CRB, velocity CRB) for the first target at nominal load."""
    plan = plan_for(config.grid, config.plan)
    paths = sample_sensing_channel(config.sen, config.grid,
                                   derive_rng_stream(config.seed, 0, 0, STREAM_CHANNEL))
    P_avg = plan.n_s / config.grid.size
    rows = []
    for ebno in config.ebno_db:
        N0, gain2 = sensing_n0(paths, ebno, config.grid.beta)
        if N0 > 0:
            inputs = CrbInputs(N0, P_avg, gain2, config.grid)
            rows.append((ebno, crb_range(inputs), crb_velocity(inputs)))
        else:
            rows.append((ebno, 0.0, 0.0))
    return rows


def cmd_crb(args):
    run = _runs(args, "rmse")[0]
    print("ebno_db,crb_range_m,crb_velocity_mps")
    for ebno, r, v in crb_rows(run.config):
        print(f"{ebno!r},{r!r},{v!r}")
    return EXIT_OK


def cmd_dump_seq(args):
    try:
        matrix = build_sequence_matrix(args.family, args.length, args.n_mult)
    except InvalidParameterError as exc:
        raise ConfigError([str(exc)]) from exc
    out = _prepare_out(args.out)
    path = os.path.join(out, f"seq_{matrix.family.value}_{args.length}_{args.n_mult}.csv")
    tmp = path + ".part"
    write_sequence_csv(matrix, tmp)
    os.replace(tmp, path)
    print(path)
    return EXIT_OK


def imaging_surface(config, ebno_index=0, frame_index=0):
    """Correlation surface of one simulated sensing frame, M x N."""
    plan = plan_for(config.grid, config.plan)
    grid = config.grid
    bits = _frame_bits(config, plan, ebno_index, frame_index)
    frame = spread(plan, map_bits_qpsk(bits), grid)
    paths = sample_sensing_channel(config.sen, grid,
                                   derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_CHANNEL))
    N0, _ = sensing_n0(paths, config.ebno_db[ebno_index], grid.beta)
    y = apply_paths(paths, frame.grid)
    if N0 > 0:
        rng = derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_NOISE)
        y = y + complex_gaussian(rng, y.shape, N0)
    return correlation_surface(build_expanded_tx(frame), y.reshape(-1, order="F"))


def cmd_dump_imaging(args):
    runs = _runs(args, "rmse")
    problems = []
    if not 0 <= args.run < len(runs):
        problems.append(f"--run {args.run} outside [0, {len(runs)})")
    elif not 0 <= args.ebno_index < len(runs[args.run].config.ebno_db):
        problems.append(f"--ebno-index {args.ebno_index} outside the Eb/N0 grid")
    if problems:
        raise ConfigError(problems)
    run = runs[args.run]
    surface = imaging_surface(run.config, args.ebno_index, args.frame)
    out = _prepare_out(args.out)
    path = os.path.join(out, f"imaging_{run.name}_e{args.ebno_index}_f{args.frame}.csv")
    tmp = path + ".part"
    write_imaging_csv(surface, tmp)
    os.replace(tmp, path)
    print(path)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {
        "ber": lambda: cmd_sweep(args, "ber"),
        "rmse": lambda: cmd_sweep(args, "rmse"),
        "crb": lambda: cmd_crb(args),
        "dump-seq": lambda: cmd_dump_seq(args),
        "dump-imaging": lambda: cmd_dump_imaging(args),
    }
    try:
        return handlers[args.command]()
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
