"""
simcl command line.

    simcl run <config> [--seed N] [--out DIR] [--threads N] [--verbose]
    simcl report <dir>
    simcl validate <config>
    simcl golden [--dir DIR] [--force | --check]

Exit status: 0 on success, 2 for config or usage errors, 1 for any other
failure. Errors print one diagnostic line on stderr.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.core.config import config_fingerprint, get_setting, load_config, resolve_output_dir
from app.core.errors import ConfigError, SimclError, UsageError
from app.core.exporter import build_report
from app.core.golden import verify_golden_corpus, write_golden_corpus
from app.runner import run_experiment

logger = logging.getLogger(__name__)

DEFAULT_GOLDEN_DIR = "tests/golden"


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="simcl",
        description="Desk-scale contrastive pretraining, fine-tuning, distillation and transfer experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiment described by a config file")
    run.add_argument("config", help="YAML experiment config")
    run.add_argument("--seed", type=int, help="Run this seed only (overrides the config's seed list)")
    run.add_argument("--out", help="Output directory (default: config output_dir, then SIMCL_OUTPUT_ROOT/<name>)")
    run.add_argument("--threads", type=int, default=1, help="Seeds run in parallel worker processes")
    run.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    report = commands.add_parser("report", help="Aggregate run metrics into a summary table and series")
    report.add_argument("directory", help="Experiment output directory")

    validate = commands.add_parser("validate", help="Parse and validate a config without running it")
    validate.add_argument("config", help="YAML experiment config")

    golden = commands.add_parser("golden", help="Regenerate or verify the augmentation golden files")
    golden.add_argument("--dir", default=DEFAULT_GOLDEN_DIR, help=f"Corpus directory (default: {DEFAULT_GOLDEN_DIR})")
    mode = golden.add_mutually_exclusive_group()
    mode.add_argument("--force", action="store_true", help="Overwrite an existing corpus")
    mode.add_argument("--check", action="store_true", help="Verify the corpus instead of writing it")

    return parser.parse_args(argv)


def setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, get_setting("SIMCL_LOG_LEVEL").upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def cmd_run(args: argparse.Namespace) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    cfg = load_config(args.config)
    out_dir = resolve_output_dir(cfg, args.out)
    seeds = [args.seed] if args.seed is not None else None
    runs = run_experiment(cfg, out_dir, seeds=seeds, threads=args.threads)
    print(f"{len(runs)} runs written to {out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise UsageError(f"{directory} is not a directory")
    bundle = build_report(directory)
    print(f"Summary table: {bundle.summary_table}")
    for path in bundle.series_files:
        print(f"Series: {path}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    print(f"OK: {cfg.kind} '{cfg.name}', {len(cfg.seeds)} seeds, fingerprint {config_fingerprint(cfg)}")
    return 0


def cmd_golden(args: argparse.Namespace) -> int:
    directory = Path(args.dir)
    if args.check:
        mismatched = verify_golden_corpus(directory)
        if mismatched:
            print(f"{len(mismatched)} golden cases differ: {', '.join(mismatched)}", file=sys.stderr)
            return 1
        print(f"Golden corpus in {directory} matches")
        return 0
    cases = write_golden_corpus(directory, force=args.force)
    print(f"Wrote {len(cases)} golden cases to {directory}")
    return 0


COMMANDS = {"run": cmd_run, "report": cmd_report, "validate": cmd_validate, "golden": cmd_golden}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_arguments(argv)
    try:
        setup_logging(getattr(args, "verbose", False))
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as e:
        print(f"simcl {args.command}: error: {e}", file=sys.stderr)
        return 2
    except SimclError as e:
        print(f"simcl {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
