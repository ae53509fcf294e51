"""
Command-line interface for epicscore.

Provides commands for simulating datasets, running conformal experiments,
aggregating reports, dumping prediction bands and managing configuration.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from epicscore import __version__
from epicscore.exceptions import ConfigError
from epicscore.utils.logger import get_logger, setup_logging

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3
EXIT_INTERRUPTED = 130


def _config_manager(args):
    from epicscore.services.config_manager import ConfigManager

    manager = ConfigManager(config_file=Path(args.config) if args.config else None)
    manager.load_config()
    return manager


def _apply_overrides(manager, args, out: Optional[str] = None):
    return manager.apply_overrides(
        seed=getattr(args, "seed", None),
        alpha=getattr(args, "alpha", None),
        runs=getattr(args, "runs", None),
        out=out,
        variance_convention=getattr(args, "variance_convention", None),
    )


def _report_format(args, out: Optional[str]) -> str:
    """Explicit --format, else the output suffix, else JSON."""
    if args.format:
        return args.format
    if out and Path(out).suffix.lower() == ".csv":
        return "csv"
    return "json"


def cmd_simulate(args):
    """Write a synthetic dataset to CSV."""
    from epicscore.services.dataset_manager import DatasetManager, write_dataset_csv

    manager = _config_manager(args)
    config = _apply_overrides(manager, args)
    spec = config.dataset
    if spec.kind == "csv":
        raise ConfigError("simulate needs a synthetic dataset (kind 'bimodal' or 'blobs')")
    if args.n is not None:
        spec = spec.model_copy(update={"n": args.n})

    dataset = DatasetManager(spec).dataset(config.seed)
    out = Path(args.out) if args.out else Path(f"{spec.label}_seed{config.seed}.csv")
    write_dataset_csv(dataset, out)
    print(f"✓ Wrote {dataset.n_samples} rows ({spec.label}, seed {config.seed}) to {out}")


def cmd_run(args):
    """Run an experiment and write per-run reports."""
    from epicscore.services.experiment_runner import aggregate, run_experiment
    from epicscore.services.report_writer import emit

    manager = _config_manager(args)
    config = _apply_overrides(manager, args, out=args.out)
    fmt = _report_format(args, config.output)
    out = Path(config.output) if config.output else Path(f"{config.name}_reports.{fmt}")

    reports = run_experiment(config, n_jobs=args.jobs, base_dir=manager.base_dir)
    emit(reports, fmt, out)

    n_failed = sum(r.failed for r in reports)
    print(f"✓ {len(reports) - n_failed}/{len(reports)} method runs succeeded, reports in {out}")
    if n_failed < len(reports):
        print()
        print(aggregate(reports).to_summary_string())


def cmd_aggregate(args):
    """Aggregate per-run reports into a method x dataset table."""
    from epicscore.services.experiment_runner import aggregate
    from epicscore.services.report_writer import emit, load_reports

    reports = []
    for name in args.reports:
        reports.extend(load_reports(Path(name)))

    table = aggregate(reports)
    fmt = _report_format(args, args.out)
    out = Path(args.out) if args.out else Path(f"aggregate.{fmt}")
    emit(table, fmt, out)

    print(table.to_summary_string())
    print(f"\n✓ Aggregate of {len(reports)} reports written to {out}")


def cmd_bands(args):
    """Dump per-point bands of the first run, one CSV per method."""
    from epicscore.services.experiment_runner import ExperimentRun
    from epicscore.services.model_store import save_pipeline
    from epicscore.services.report_writer import write_band_dump

    logger = get_logger()
    manager = _config_manager(args)
    config = _apply_overrides(manager, args)
    if config.dataset.is_classification:
        raise ConfigError("bands needs a regression dataset; classification methods produce label sets")

    out_dir = Path(args.out) if args.out else Path("bands")
    run = ExperimentRun(config, 0, config.run_seeds()[0], base_dir=manager.base_dir)

    for method in config.methods:
        outcome = run.run_method(method)
        path = write_band_dump(
            out_dir / f"{method}.csv",
            run.test.features,
            outcome.regions,
            run.test.target,
            column_names=run.data.column_names,
        )
        print(f"✓ {method}: {len(outcome.regions)} bands -> {path}")

        if args.save_models and outcome.pipeline is not None:
            model_path = save_pipeline(outcome.pipeline, Path(args.save_models) / f"{method}.model")
            logger.info(f"Saved {method} predictive model to {model_path}")


def cmd_config(args):
    """Write, show or validate configuration."""
    from epicscore.services.config_manager import ConfigManager

    manager = ConfigManager(config_file=Path(args.config) if args.config else None)

    if args.init:
        path = manager.write_template(overwrite=args.force)
        print(f"✓ Template configuration written to: {path}")
        print(f"\nNext steps:")
        print(f"1. Edit configuration: {path}")
        print(f"2. Check it: epicscore --config {path} config --validate")
        print(f"3. Run: epicscore --config {path} run")

    elif args.show:
        print(manager.get_config_summary())

    elif args.validate:
        is_valid, errors = manager.validate_config()

        if is_valid:
            print("✓ Configuration is valid")
        else:
            print("✗ Configuration has errors:")
            for error in errors:
                print(f"  - {error}")
            sys.exit(EXIT_CONFIG_ERROR)

    else:
        location = manager.config_file or "(defaults, no file)"
        print(f"Configuration file: {location}")
        print(f"\nTo write a template:")
        print(f"  epicscore --config experiment.json config --init")
        print(f"\nTo validate configuration:")
        print(f"  epicscore --config experiment.json config --validate")


def _add_override_arguments(parser: argparse.ArgumentParser, out_help: str) -> None:
    parser.add_argument('--seed', type=int, metavar='N', help='Override the base seed')
    parser.add_argument('--alpha', type=float, metavar='A', help='Override the miscoverage level')
    parser.add_argument('--runs', type=int, metavar='N', help='Override the number of runs')
    parser.add_argument('--out', metavar='PATH', help=out_help)
    parser.add_argument(
        '--variance-convention',
        choices=['sd', 'var'],
        help='Read the synthetic noise levels as standard deviations or variances'
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="epicscore",
        description="EPICSCORE - Epistemic-uncertainty-aware conformal prediction",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  epicscore --config exp.json config --init     Write a template config
  epicscore --config exp.json config --validate Validate configuration
  epicscore simulate --seed 3 --out dgp.csv     Write a synthetic dataset
  epicscore --config exp.json run --runs 5      Run an experiment
  epicscore aggregate reports.json --format csv Aggregate run reports
  epicscore --config exp.json bands --out bands Dump per-point bands

Environment:
  EPIC_THREADS caps the number of worker processes (also read from .env).
        """
    )

    # Global arguments
    parser.add_argument(
        '--config',
        metavar='FILE',
        help='Experiment configuration JSON (default: built-in defaults)'
    )

    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Enable verbose (DEBUG) logging'
    )

    parser.add_argument(
        '--quiet', '-q',
        action='store_true',
        help='Suppress console logging'
    )

    parser.add_argument(
        '--log-file',
        metavar='PATH',
        help='Also log to a rotating file'
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'epicscore {__version__}'
    )

    # Subcommands
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    # simulate command
    parser_simulate = subparsers.add_parser(
        'simulate',
        help='Write a synthetic dataset to CSV'
    )
    _add_override_arguments(parser_simulate, 'Output CSV (default: <dataset>_seed<seed>.csv)')
    parser_simulate.add_argument(
        '--n',
        type=int,
        metavar='N',
        help='Number of rows (default: the config dataset size)'
    )
    parser_simulate.set_defaults(func=cmd_simulate)

    # run command
    parser_run = subparsers.add_parser(
        'run',
        help='Run an experiment and write per-run reports'
    )
    _add_override_arguments(parser_run, 'Report file (default: <name>_reports.<format>)')
    parser_run.add_argument(
        '--format',
        choices=['json', 'csv'],
        help='Report format (default: from --out suffix, else json)'
    )
    parser_run.add_argument(
        '--jobs', '-j',
        type=int,
        metavar='N',
        help='Worker processes (default: EPIC_THREADS or CPU count)'
    )
    parser_run.set_defaults(func=cmd_run)

    # aggregate command
    parser_aggregate = subparsers.add_parser(
        'aggregate',
        help='Aggregate per-run reports'
    )
    parser_aggregate.add_argument(
        'reports',
        nargs='+',
        metavar='REPORT',
        help='Report files written by run (JSON or CSV)'
    )
    parser_aggregate.add_argument(
        '--out',
        metavar='PATH',
        help='Aggregate file (default: aggregate.<format>)'
    )
    parser_aggregate.add_argument(
        '--format',
        choices=['json', 'csv'],
        help='Output format (default: from --out suffix, else json)'
    )
    parser_aggregate.set_defaults(func=cmd_aggregate)

    # bands command
    parser_bands = subparsers.add_parser(
        'bands',
        help='Dump per-point bands of the first run'
    )
    _add_override_arguments(parser_bands, 'Output directory (default: bands)')
    parser_bands.add_argument(
        '--save-models',
        metavar='DIR',
        help='Also save fitted EPICSCORE predictive models here'
    )
    parser_bands.set_defaults(func=cmd_bands)

    # config command
    parser_config = subparsers.add_parser(
        'config',
        help='Write, show or validate configuration'
    )
    parser_config.add_argument(
        '--init',
        action='store_true',
        help='Write a template configuration to --config'
    )
    parser_config.add_argument(
        '--force',
        action='store_true',
        help='Overwrite an existing file with --init'
    )
    parser_config.add_argument(
        '--show',
        action='store_true',
        help='Show configuration summary'
    )
    parser_config.add_argument(
        '--validate',
        action='store_true',
        help='Validate configuration'
    )
    parser_config.set_defaults(func=cmd_config)

    return parser


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Setup logging
    log_level = "DEBUG" if args.verbose else "INFO"
    setup_logging(
        log_file=Path(args.log_file) if args.log_file else None,
        log_level=log_level,
        console_output=not args.quiet
    )

    logger = get_logger()

    # Show help if no command
    if not args.command:
        parser.print_help()
        sys.exit(EXIT_OK)

    # Run command
    try:
        logger.debug(f"Running command: {args.command}")
        args.func(args)
        logger.debug(f"Command {args.command} completed successfully")
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        logger.info("User interrupted operation")
        sys.exit(EXIT_INTERRUPTED)
    except (ConfigError, ValidationError) as e:
        print(f"\nConfiguration error: {e}")
        logger.error(f"Command {args.command} failed: {e}", exc_info=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except Exception as e:
        print(f"\nError: {e}")
        logger.error(f"Command {args.command} failed: {e}", exc_info=True)
        sys.exit(EXIT_RUNTIME_ERROR)


if __name__ == '__main__':
    main()
