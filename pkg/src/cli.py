"""
Command line harness
Subcommands map a YAML run config to experiments and errors to exit codes
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import RuntimeConfig, get_config, load_run_config
from .errors import ConfigError, InsulationError
from .experiments import ExperimentService, get_experiment_service
from .models import ErrorReport

logger = logging.getLogger(__name__)

COMMANDS = ("solve-reduced", "solve-thick", "optimize", "gamma-sweep", "verify", "mesh-info")
TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class JsonFormatter(logging.Formatter):
    """One JSON object per log line"""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "time": self.formatTime(record),
            "logger": record.name,
            "level": record.levelname,
            "message": record.getMessage(),
        }
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def setup_logging(runtime: RuntimeConfig) -> None:
    """Configure the root logger on stderr; stdout carries only command summaries"""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if runtime.log_format == "json" else logging.Formatter(TEXT_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(runtime.log_level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insulation", description="Optimal insulation of a conducting body")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", required=True, type=Path, help="YAML run config")
        sub.add_argument("--out", type=Path, help="Output directory")
        sub.add_argument("--threads", type=int, help="Worker threads for epsilon sweeps")
        sub.add_argument("--seed", type=int, help="Seed of the random checks")
    return parser


def _runtime_from_args(args: argparse.Namespace) -> RuntimeConfig:
    runtime = get_config()
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        runtime = replace(runtime, threads=args.threads)
    if args.seed is not None:
        runtime = replace(runtime, seed=args.seed)
    return runtime


def run_command(command: str, service: ExperimentService) -> str:
    """Run one subcommand and return its stdout summary"""
    if command == "solve-reduced":
        report = service.solve_reduced()
        return f"E_reduced={report.energy.total:.17g}"
    if command == "solve-thick":
        results = service.solve_thick()
        return "\n".join(f"epsilon={r.epsilon:.17g} E_thick={r.report.energy.total:.17g}" for r in results)
    if command == "gamma-sweep":
        rows = service.gamma_sweep()
        return "\n".join(f"epsilon={row['epsilon']:.17g} gap={row['gap']:.17g}" for row in rows)
    if command == "optimize":
        state = service.optimize()
        return (
            f"Q_tot={service.net_heat_input():.17g} E={state.energy:.17g} c={state.c:.17g} "
            f"iterations={state.iteration} converged={str(state.converged).lower()}"
        )
    if command == "verify":
        results = service.verify()
        return f"{len(results)} checks passed"
    if command == "mesh-info":
        rows = service.mesh_info()
        return "\n".join(f"{row['mesh']}: nodes={row['nodes']} triangles={row['triangles']}" for row in rows)
    raise ConfigError(f"unknown command {command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the command and return the process exit code"""
    args = build_parser().parse_args(argv)
    try:
        runtime = _runtime_from_args(args)
        setup_logging(runtime)
        run = load_run_config(args.config)
        service = get_experiment_service(run, runtime, args.out)
        logger.info("=" * 70)
        logger.info(f"{args.command}: {run.name}")
        logger.info(f"Output directory: {service.out_dir}")
        logger.info("=" * 70)
        print(run_command(args.command, service))
        return 0
    except InsulationError as e:
        logger.error(f"{args.command} failed: {e.error}: {e.message}")
        report = ErrorReport(error=e.error, message=e.message, exit_code=e.exit_code, details=e.details or None)
        print(json.dumps(report.model_dump(), default=str), file=sys.stderr)
        return e.exit_code
