#!/usr/bin/env python3
"""
apaths: Lie algebroid path-space checks

Runs one task (algebroid axioms, path integration, homotopy decision, oracle
groupoids, path-space symplectic checks, finite etale models or convergence
measurement) from a configuration file and writes a JSON report.
"""

import argparse
import json
import logging
import sys

from src.config_manager import TASKS, ConfigError, load_config
from src.service import run_suite
from src.utils.logging_utils import setup_logging

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def parse_args(argv=None):
    """
    Parse command line arguments.

    Returns:
        argparse.Namespace: Parsed arguments
    """
    parser = argparse.ArgumentParser(prog='apaths', description='Lie algebroid path-space checks')

    parser.add_argument(
        'task',
        choices=TASKS,
        help='Task to run'
    )

    parser.add_argument(
        '-c', '--config',
        default='config.yaml',
        help='Path to configuration file (default: config.yaml)'
    )

    parser.add_argument('--report', help='Write the JSON report to this file')
    parser.add_argument('--csv', help='Write the convergence table (or the path-space pairing matrix) to this file')
    parser.add_argument('--seed', type=int, help='Override numerics.seed')
    parser.add_argument('--nt', type=int, help='Override numerics.n_t')
    parser.add_argument('--neps', type=int, help='Override numerics.n_eps')

    parser.add_argument(
        '-l', '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        default='INFO',
        help='Logging level (default: INFO)'
    )

    parser.add_argument(
        '--log-file',
        help='Path to log file (default: no file)'
    )

    parser.add_argument(
        '--no-console',
        action='store_true',
        help='Disable console logging'
    )

    return parser.parse_args(argv)


def main(argv=None):
    """
    Main entry point.

    Returns:
        int: 0 if every record passed, 1 if a check failed, 2 on configuration errors
    """
    args = parse_args(argv)

    log_level = getattr(logging, args.log_level)
    logger = setup_logging(log_level=log_level, log_file=args.log_file, console=not args.no_console)

    logger.info(f"Starting apaths {args.task}")
    logger.info(f"Python version: {sys.version.split()[0]}")
    logger.info(f"Configuration file: {args.config}")

    overrides = {'task': args.task, 'seed': args.seed, 'n_t': args.nt, 'n_eps': args.neps,
                 'report': args.report, 'csv': args.csv}
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        logger.critical(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    try:
        report = run_suite(config)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_FAIL
    except Exception as e:
        logger.critical(f"Run failed: {str(e)}", exc_info=True)
        return EXIT_FAIL

    if not config.report_path:
        print(json.dumps(report.to_dict(), indent=2))
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == '__main__':
    sys.exit(main())
