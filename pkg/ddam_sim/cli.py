"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""

import argparse
import json
import logging
import sys
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Sequence

from ddam_sim import datagen, harness, reports, traffic
from ddam_sim.config import load_config
from ddam_sim.errors import ConfigurationError, DdamError
from ddam_sim.settings import configure_logging, output_dir

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", type=Path, help="experiment TOML file")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted key override applied before validation (repeatable)",
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    out = args.output_dir or output_dir()
    reports.check_outputs(out, cfg, args.force)
    rows = harness.run_experiment(cfg, workers=args.workers, progress=lambda r: print(reports.summary_line(r)))
    written = reports.write_reports(rows, out, cfg, force=args.force)
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_trees(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    frame, capacity = harness.tree_report(cfg)
    for agent, group in frame.groupby("agent", sort=True):
        print(f"agent {agent}")
        for row in group.itertuples(index=False):
            print(
                f"  {row.method:<9} tau_sum={row.tau_sum:<4} tau_max={row.tau_max:<4} "
                f"delta_tau={row.delta_tau:<4} edges=[{row.edges}]"
            )
    for method, c_max in capacity.items():
        print(f"C_max {method}: {c_max}")
    if args.csv is not None:
        if args.csv.exists() and not args.force:
            raise ConfigurationError(f"{args.csv} already exists; pass --force to overwrite")
        frame.to_csv(args.csv, index=False)
        print(f"wrote {args.csv}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    out = args.out if args.out is not None else output_dir() / f"{args.kind}.csv"
    if out.exists() and not args.force:
        raise ConfigurationError(f"{out} already exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "periodic-traffic":
        records = traffic.gen_periodic_traffic(
            args.n_agents, args.days, seed=args.seed, noise=args.noise, weekly=args.weekly
        )
        traffic.write_traffic_csv(records, out)
        print(f"wrote {len(records)} traffic records to {out}")
    else:
        syn = datagen.SyntheticConfig(
            n_agents=args.n_agents, d_k=args.d_k, d_v=args.d_v, rho=args.rho, seed=args.seed
        )
        stream = datagen.gen_stream(syn, datagen.gen_ground_truth(syn), args.horizon)
        datagen.export_stream_csv(stream, out)
        print(f"wrote {stream.n_agents * stream.horizon} stream rows to {out}")
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    print(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_version(args: argparse.Namespace) -> int:
    try:
        print(importlib_metadata.version("ddam-sim"))
    except importlib_metadata.PackageNotFoundError:
        print("unknown")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddam", description="Distributed dynamic associative memory simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write CSV reports")
    _add_config_args(run)
    run.add_argument("--output-dir", type=Path, default=None, help="defaults to $DDAM_OUTPUT_DIR or ./results")
    run.add_argument("--force", action="store_true", help="overwrite existing outputs")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default $DDAM_WORKERS)")
    run.set_defaults(func=cmd_run)

    trees = sub.add_parser("trees", help="compare Steiner and sum-delay routing trees")
    _add_config_args(trees)
    trees.add_argument("--csv", type=Path, default=None, help="also write the report as CSV")
    trees.add_argument("--force", action="store_true")
    trees.set_defaults(func=cmd_trees)

    gen = sub.add_parser("gen-data", help="materialize a synthetic stream or periodic traffic as CSV")
    gen.add_argument("kind", choices=["periodic-traffic", "synthetic"])
    gen.add_argument("--out", type=Path, default=None)
    gen.add_argument("--n-agents", type=int, default=2)
    gen.add_argument("--days", type=int, default=1)
    gen.add_argument("--noise", type=float, default=0.25)
    gen.add_argument("--weekly", type=float, default=0.0, help="weekly modulation depth in [0, 1)")
    gen.add_argument("--horizon", type=int, default=100)
    gen.add_argument("--d-k", type=int, default=4)
    gen.add_argument("--d-v", type=int, default=4)
    gen.add_argument("--rho", type=float, default=0.75)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_gen_data)

    validate = sub.add_parser("validate-config", help="validate a config and print it normalized")
    _add_config_args(validate)
    validate.set_defaults(func=cmd_validate_config)

    version = sub.add_parser("version", help="print the package version")
    version.set_defaults(func=cmd_version)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except DdamError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        usage = isinstance(e, ConfigurationError) or isinstance(getattr(e, "cause", None), ConfigurationError)
        return EXIT_USAGE if usage else EXIT_RUNTIME
    except OSError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
