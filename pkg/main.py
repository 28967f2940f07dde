"""
zakdd - Zak-OTFS delay-Doppler toolkit, command-line entry point.

Subcommands:
- run <config>        run an experiment and write CSV/JSON results
- validate <config>   parse a config and report feasibility warnings
- demo <experiment>   print (or save) a canned config for an experiment
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from modules import __version__
from modules import experiments
from utils.error_handler import FileError, ZakDDError, format_error_line, safe_execute
from utils.logger import setup_logger
from utils.validator import ExperimentKind, feasibility_warnings, load_config

logger = logging.getLogger("zakdd")

TEMPLATE_DIR = Path(__file__).parent / "templates" / "examples"

EPILOG = """
CSV columns per experiment:
  ambiguity    k, l, magnitude_db (full torus)
  filters      family, orthogonality_residual, max_sidelobe_db, band_energy_fraction,
               time_energy_fraction; *_cross_section.csv: family, normalized_delay,
               magnitude, magnitude_db
  ber          snr_db, trials, bits, bit_errors, ber, scheme, filter, seed
  fde          half_bandwidth, mean_band_energy_fraction, min_band_energy_fraction
  diffcomm     snr_db, frame, kind, ber, tap_nmse, ber_perfect_csi
  mub          snr_db, trials, ber_full, ber_sparse, ber, r_eff, throughput, alpha, delta, seed
  radar        k, l, magnitude_db (core region); *_roc.csv: threshold, pfa, pd
  polarimetry  snr_db, trials, rmse_single_pol, rmse_dual_pol, seed
  papr         family, threshold_db, ccdf

Every CSV starts with a '#' header block holding the version, seed and full config.
A JSON sidecar with the config and a summary is written next to the primary CSV.

Examples:
  python main.py demo ber --output ber.yaml
  python main.py validate ber.yaml
  python main.py run ber.yaml --threads 4

The worker count falls back to ZAKDD_THREADS when --threads is absent.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zakdd",
        description=f"zakdd v{__version__} - Zak-OTFS delay-Doppler experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument('--version', action='version', version=f'zakdd {__version__}')
    parser.add_argument('--verbose', action='store_true', help='Enable DEBUG logging')
    parser.add_argument('--log-dir', default='logs', help='Directory for JSON log files (default: logs)')
    parser.add_argument('--no-log-file', action='store_true', help='Log to the console only')

    sub = parser.add_subparsers(dest='command', required=True)

    run_p = sub.add_parser('run', help='Run an experiment')
    run_p.add_argument('config', help='Experiment config (YAML)')
    run_p.add_argument('--threads', type=int, default=None, help='Worker threads (default: ZAKDD_THREADS or 1)')
    run_p.add_argument('--output', default=None, help='Override output.path from the config')

    val_p = sub.add_parser('validate', help='Validate a config without running it')
    val_p.add_argument('config', help='Experiment config (YAML)')

    demo_p = sub.add_parser('demo', help='Emit a canned config')
    demo_p.add_argument('experiment', choices=[k.value for k in ExperimentKind])
    demo_p.add_argument('--output', default=None, help='Write to this file instead of stdout')
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = cfg.model_copy(update={'output': cfg.output.model_copy(update={'path': args.output})})
    with safe_execute(f"experiment {cfg.experiment}", raise_on_error=True):
        written = experiments.run(cfg, args.threads)
    for path in written:
        print(path)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    warnings = feasibility_warnings(cfg)
    for warning in warnings:
        print(f"warning: {warning}")
    logger.info(f"{args.config}: valid {cfg.experiment} config, {len(warnings)} warning(s)")
    return 0


def demo_config(experiment: str) -> str:
    """Canned config text for an experiment."""
    path = TEMPLATE_DIR / f"{experiment}.yaml"
    try:
        return path.read_text(encoding='utf-8')
    except OSError as e:
        raise FileError(f"Cannot read canned config {path}: {e}", stage="demo") from e


def cmd_demo(args: argparse.Namespace) -> int:
    text = demo_config(args.experiment)
    if args.output:
        try:
            Path(args.output).write_text(text, encoding='utf-8')
        except OSError as e:
            raise FileError(f"Cannot write {args.output}: {e}", stage="demo") from e
        logger.info(f"Wrote {args.experiment} config to {args.output}")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {'run': cmd_run, 'validate': cmd_validate, 'demo': cmd_demo}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map errors to exit codes (0, 1, 130)."""
    args = build_parser().parse_args(argv)
    setup_logger(
        name='',
        log_dir=args.log_dir,
        log_level=logging.DEBUG if args.verbose else logging.INFO,
        file_output=not args.no_log_file,
    )
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("error=KeyboardInterrupt stage=run message=\"interrupted\"", file=sys.stderr)
        return 130
    except ZakDDError as e:
        print(format_error_line(e, stage=e.stage or args.command), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
