# app/cli/commands.py
"""
Command-line entry point: `zxlab run <subcommand> [--key value ...]`.

Global flags are declared here; any other `--key value` pair is handed to
the subcommand's parameter model, which rejects unknown keys.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional, Sequence

import structlog
from colorama import Fore, Style
from colorama import init as colorama_init
from pydantic import ValidationError

from app.config.config import ExperimentConfig, Subcommand, get_settings, read_key_value_file
from app.config.logging import configure_logging
from app.errors import LabError
from app.pipeline.invariant_checker import EXIT_ERROR, EXIT_INVARIANT, EXIT_OK
from app.workflow.director import GraphDirector

logger = structlog.get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zxlab", allow_abbrev=False, description="Numerical lab for large values of zeta on short intervals")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-json", action="store_true", help="emit JSON log lines on stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one experiment", allow_abbrev=False)
    run.add_argument("subcommand", choices=[s.value for s in Subcommand])
    run.add_argument("--config", default=None, help="key=value file merged under the flags")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--replicas", type=int, default=None)
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--out", default=None, help="artifact directory")
    run.add_argument("--sieve-cache", dest="sieve_cache", default=None)
    run.add_argument("--grid-max", dest="grid_max", type=int, default=None)
    return parser


def parse_extra(tokens: Sequence[str]) -> Dict[str, str]:
    """
    Turn leftover `--key value` / `--key=value` tokens into parameters

    Dashes in keys become underscores. A key without a value is an error.
    """
    extra: Dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or token == "--":
            raise LabError(f"Unexpected argument: {token}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if i + 1 >= len(tokens) or tokens[i + 1].startswith("--"):
                raise LabError(f"Missing value for --{key}")
            value = tokens[i + 1]
            i += 1
        extra[key.replace("-", "_")] = value
        i += 1
    return extra


def run(config: ExperimentConfig) -> int:
    """Execute one resolved experiment and return the process exit code"""
    log = logger.bind(subcommand=config.subcommand.value, seed=config.seed)
    log.info("run_started", out=str(config.out))
    workflow = GraphDirector.experiment()
    final = workflow.invoke({"config": config})
    code = final.get("exit_code", EXIT_OK)
    if final.get("error"):
        print(f"{Fore.RED}error:{Style.RESET_ALL} {final['error']}", file=sys.stderr)
        return EXIT_ERROR
    failed = [c.name for c in final.get("checks", []) if not c.passed]
    if failed:
        print(f"{Fore.YELLOW}invariant failed:{Style.RESET_ALL} {', '.join(failed)}", file=sys.stderr)
    log.info("run_finished", exit_code=code, artifacts=len(final.get("artifacts", [])))
    return code if code in (EXIT_OK, EXIT_INVARIANT) else EXIT_ERROR


def resolve_config(args: argparse.Namespace, extra: Dict[str, Any]) -> ExperimentConfig:
    file_values = read_key_value_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "replicas": args.replicas,
        "threads": args.threads,
        "out": args.out,
        "sieve_cache": args.sieve_cache,
        "grid_max": args.grid_max,
        **extra,
    }
    return ExperimentConfig.resolve(args.subcommand, file_values, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    colorama_init(strip=not sys.stderr.isatty())
    parser = build_parser()
    args, leftover = parser.parse_known_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.log_level, json=args.log_json or settings.log_json)

    try:
        config = resolve_config(args, parse_extra(leftover))
    except (ValidationError, LabError, FileNotFoundError) as e:
        logger.error(f"Failed to resolve configuration: {str(e)}")
        print(f"{Fore.RED}error:{Style.RESET_ALL} {e}", file=sys.stderr)
        return EXIT_ERROR
    return run(config)
